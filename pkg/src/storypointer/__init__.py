"""Story-point effort estimation from requirement text.

The pipeline ingests issue-tracker stories, turns their text into fixed
or contextual embeddings, and trains a small recurrent estimator that
predicts effort as a number or as a Planning Poker class.
"""

__version__ = "0.1.0"
