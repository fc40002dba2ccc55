"""Dataset ingestion, desk rig, evaluation, experiments, and persistence."""
