import os

from dotenv                     import load_dotenv

load_dotenv()


def _env(name, default, cast=str):
    value = os.getenv(f"PXATTACK_{name}")
    if value is None or value == "":
        return default
    if cast is bool:
        return value.strip().lower() in ("1", "true", "yes", "on")
    return cast(value)


# Allowed L-infinity perturbation size (RobustBench ImageNet setting)
EPSILON = _env("EPSILON", 4 / 255, float)

# Maximum number of model queries per image
ITERATIONS = _env("ITERATIONS", 1000, int)

# Base seed, each image gets its own stream seeded as SEED ^ image_index
SEED = _env("SEED", 0, int)

# Superpixel Attack: budget growth factor between refinement phases
SEGMENT_RATIO = _env("SEGMENT_RATIO", 4, int)

# SLIC spatial weight and post-processing
ALPHA = _env("ALPHA", 10.0, float)
ENFORCE_CONNECTIVITY = _env("ENFORCE_CONNECTIVITY", True, bool)
KMEANS_ITERS = _env("KMEANS_ITERS", 10, int)

# Square Attack initial window fraction
SQUARE_P_INIT = _env("SQUARE_P_INIT", 0.05, float)

# Seconds to wait for one answer of an external model
EXTERNAL_TIMEOUT = _env("EXTERNAL_TIMEOUT", 30.0, float)

# Images attacked concurrently (external models always use 1)
JOBS = _env("JOBS", 1, int)

# Iteration counts at which success rates are reported
CHECKPOINTS = (100, 1000)

LOG_LEVEL = _env("LOG_LEVEL", "INFO")

# Base directory. Feel free to use it if you want.
BASE_DIR = os.path.dirname(os.path.realpath(__file__))
