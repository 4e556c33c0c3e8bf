# Shared helpers: seeding and artifact persistence
