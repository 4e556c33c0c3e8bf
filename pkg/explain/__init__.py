# Explainability package
