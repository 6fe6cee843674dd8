"""
advgame configuration settings
"""

import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Application
APP_NAME = "advgame"
APP_VERSION = "1.0.0"
APP_DESCRIPTION = "Adversarial training as a two-network game, with gradient and flow attacks"
DEBUG_MODE = os.getenv('ADVGAME_DEBUG', 'False').lower() == 'true'

# Runs
OUTPUT_DIR = os.getenv('ADVGAME_OUTPUT_DIR', 'runs')
DEFAULT_SEED = int(os.getenv('ADVGAME_SEED', 0))

# Game hyperparameters (full scale)
EPOCHS_CLASSIFICATION = 100
EPOCHS_REGRESSION = 400
DEFENSE_STEPS = 1
ATTACK_STEPS = 1
DEFENSE_LR = 1e-3
ATTACK_LR = 2e-4
DELTA = 0.2

# PGD
PGD_GAMMA = 0.01
PGD_STEPS = 50
PGD_RESTARTS = 10

# Desk scale defaults for reproductions
DESK_N = 1000
DESK_EPOCHS = 30
FULL_N = 2000
PRESET_BATCH_SIZE = 32
NOISE = 0.05

CHECKPOINT_EVERY = 10
GRID_RESOLUTION = 51
