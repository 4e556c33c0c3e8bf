# Experiment orchestration package
