"""Stepwise credit-assignment benchmark for conditional sequence GANs."""

from .counting import (
    CountingDataset,
    CountingExample,
    enumerate_answers,
    generate_dataset,
    is_valid,
    load_dataset,
    save_dataset,
    true_conditional,
)
from .credit_assignment import (
    GAN_KINDS,
    KINDS,
    StrategyConfig,
    discriminator_loss,
    generator_gradient,
    mcts_rollout_value,
    step_weights,
)
from .evaluation import (
    EvalReport,
    OracleGenerator,
    average_length,
    build_general_set,
    count_general,
    distinct_ngrams,
    evaluate_model,
    forward_kld,
    inverse_kld,
    precision_argmax,
    q_variance_probe,
    sample_precision_recall,
    timing_benchmark,
)
from .models import (
    BOS,
    EOS,
    PAD,
    VOCAB_SIZE,
    Discriminator,
    Generator,
    ModelConfig,
    ValueNet,
    decode_argmax,
    discriminate_steps,
    discriminator_score,
    load_checkpoint,
    make_rng,
    sample_response,
    save_checkpoint,
    sequence_log_prob,
    value_estimates,
)
from .training import (
    DivergenceError,
    GanTrainer,
    TrainingConfig,
    TrainingHistory,
    hyperparameter_grid,
    pretrain_discriminator,
    pretrain_mle,
    train_gan,
    update_value_network,
)
