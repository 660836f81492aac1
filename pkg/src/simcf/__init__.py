"""simcf: dot-product vs MLP-learned similarity for implicit-feedback
collaborative filtering -- models, training, sampled ranking evaluation,
a synthetic dot-product approximation study, and retrieval benchmarking."""

from .data import (
    EvalCase,
    EvalSet,
    Interaction,
    RatingCorpus,
    build_corpus,
    load_negatives,
    load_ratings,
    make_tuning_split,
    parse_negatives,
    parse_ratings,
    sample_eval_negatives,
    write_negatives,
    write_ratings,
)
from .errors import ParseError, SimcfError, ValidationError
from .evaluation import EvalResult, evaluate, hr_at_k, ndcg_at_k, popularity_scores, rank_of
from .models import (
    BatchScorer,
    DotParams,
    GmfParams,
    MlpSimParams,
    MlpTower,
    NeuMfParams,
    StaticScores,
    load_params,
    mlp_forward,
    neumf_split,
    predictive_factor_to_dims,
    save_params,
    score_dot,
    score_gmf_logit,
    score_items,
    score_mlp,
    score_neumf,
    score_pair,
)
from .retrieval import TopK, bench_retrieval, retrieve, topk_select
from .synthetic import (
    SynthBatch,
    SynthConfig,
    baseline_rmses,
    generate,
    rmse,
    run_synth,
    sigma_emb,
)
from .training import (
    AdamConfig,
    AdamState,
    EpochStream,
    SgdConfig,
    TrainExample,
    adam_step,
    backprop,
    example_loss,
    finite_diff_grad,
    init_params,
    logistic_loss,
    pretrain_neumf,
    sample_negatives,
    sgd_step_mf,
    sigmoid,
    train_learned,
    train_mf,
)

__version__ = "0.1.0"
