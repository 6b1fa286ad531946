"""cotforge: curate verified long chain-of-thought training datasets.

The pipeline ingests question corpora (math, code, geometry), scores
difficulty, fans out sampling requests to a chat-completion backend,
filters and verifies the responses with deterministic rules, labels them
with a three-valued reward, and emits SFT / preference-pair / RL prompt
datasets plus a retention funnel report.
"""

__version__ = "0.1.0"
