NAME = "flowmix"

# Latent prior / decoder floors
VARIANCE_FLOOR = 1e-4
DECODER_VARIANCE_FLOOR = 1e-6
EMPTY_CLUSTER_MASS = 1e-8

# Dataset defaults
RE_MIN = 98.0
RE_MAX = 2000.0
GRID = 32
NOISE_FRAC = 0.15
CHANNELS = ("u", "v", "p")

# Network defaults
ENCODER_HIDDEN = (512, 128)
COND_HIDDEN = 64
# decoder variance starts below the unit variance of standardized features
DECODER_LOG_VAR_INIT = -2.0
# per-feature scales never drop below this fraction of the widest one
STANDARDIZE_REL_FLOOR = 1e-3

# Interpretability metric defaults
KNN_K = 10
ALPHA = 0.05
EIGEN_TIE_TOL = 1e-9

# Binary formats
DATASET_MAGIC = b"GMVF"
DATASET_VERSION = 1
MODEL_MAGIC = b"GMVM"
MODEL_VERSION = 1
