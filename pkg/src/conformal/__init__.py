"""Conformal prediction framework.

Set-valued and interval-valued predictors with validity guarantees under
exchangeability: transductive and inductive conformal classifiers with
pluggable nonconformity measures and category taxonomies, regression
prediction intervals, Venn multi-probabilistic predictors, and combined
abstaining classifiers driven by ROC-hull precision isometrics.
"""

from .cp import (
    ConformalClassifier,
    CpConfig,
    PredictionSet,
    PValueTable,
    constant_taxonomy,
    label_taxonomy,
)
from .data import Bag, SeededRng, SplitSpec, load_csv, save_csv, split, tau_stream
from .icp import IcpConfig, InductiveConformalClassifier
from .meta import (
    ABSTAIN,
    ClassifierHooks,
    CombinedClassifier,
    MetaExample,
    RocPoint,
    Threshold,
    conformal_meta_hooks,
    iso_precision_threshold,
    kfold_meta_data,
    roc_points,
    rocch,
    score_ratios,
)
from .metrics import (
    ConfusionMatrix,
    EpsilonStats,
    IntervalReport,
    IntervalStats,
    ValidityReport,
    confusion_metrics,
    validity_report,
)
from .ncm import (
    CartConfig,
    DecisionTreeMeasure,
    KnnClassifierMeasure,
    KnnConfig,
    KnnRegressionProvider,
    ModelOutputAdapterConfig,
    ModelOutputMeasure,
    NonconformityMeasure,
    RegressionCoefficientProvider,
    cart_score,
    cart_train,
    knn_regression_coeffs,
    knn_regression_coeffs_n,
    knn_score_per_label,
    knn_scores,
    model_output_score,
)
from .regression import (
    ConformalRegressor,
    PredictionIntervals,
    RrcmConfig,
    ScoreLine,
    normalize_line,
    prediction_intervals,
    score_region,
)
from .venn import (
    NearestNeighborTaxonomy,
    ProbabilityInterval,
    VennMatrix,
    VennPredictor,
    VennReport,
    VennTaxonomy,
)

__version__ = "0.1.0"
