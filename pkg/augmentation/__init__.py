# Augmentation package
