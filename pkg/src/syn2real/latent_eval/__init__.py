from .embed import (LatentPoint, embed, read_embeddings_csv,
                    write_embeddings_csv)
from .knn import KnnConfig, auto_k, knn_classify
from .report import accuracy_report, export_scatter_svg, write_report_csv
from .svm import SvmModel, linear_svm_fit, linear_svm_predict
from .tsne import conditional_p, joint_p, tsne

__all__ = [
    "LatentPoint",
    "KnnConfig",
    "SvmModel",
    "accuracy_report",
    "auto_k",
    "conditional_p",
    "embed",
    "export_scatter_svg",
    "joint_p",
    "knn_classify",
    "linear_svm_fit",
    "linear_svm_predict",
    "read_embeddings_csv",
    "tsne",
    "write_embeddings_csv",
    "write_report_csv",
]
