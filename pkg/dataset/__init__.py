# Dataset package
