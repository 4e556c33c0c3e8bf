#!/usr/bin/env python3
"""
Setup script for the activity classification experiments
"""
import subprocess
import sys
import os
from pathlib import Path

ENV_TEMPLATE = """# Storage
HAR_CACHE_DIR=~/.cache/har
HAR_RUN_DIR=runs

# Set to 1 once the hub weights are cached to forbid network access
HAR_OFFLINE=0
HAR_DOWNLOAD_WORKERS=8
HAR_DEVICE=auto

# Application Configuration
DEBUG=False
"""


def run_command(command, description):
    """Run a command and handle errors"""
    print(f"🔄 {description}...")
    try:
        subprocess.run(command, shell=True, check=True, capture_output=True, text=True)
        print(f"✅ {description} completed")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ {description} failed: {e}")
        print(f"Error output: {e.stderr}")
        return False


def main():
    print("🚀 Setting up activity classification experiments...")
    print("=" * 50)

    if sys.version_info < (3, 9):
        print("❌ Python 3.9+ is required")
        sys.exit(1)

    print(f"✅ Python {sys.version_info.major}.{sys.version_info.minor} detected")

    if not run_command("pip install -r requirements.txt", "Installing dependencies"):
        sys.exit(1)

    env_file = Path(".env")
    if not env_file.exists():
        print("📝 Creating .env file...")
        env_file.write_text(ENV_TEMPLATE)
        print("✅ Created .env file with default settings")
    else:
        print("✅ .env file already exists")

    cache_dir = Path(os.path.expanduser(os.getenv("HAR_CACHE_DIR", "~/.cache/har")))
    for directory in (cache_dir / "images", cache_dir / "hub", Path(os.getenv("HAR_RUN_DIR", "runs"))):
        directory.mkdir(parents=True, exist_ok=True)
        print(f"📁 {directory}")

    print("\n🎉 Setup complete!")
    print("\nNext steps:")
    print("1. Point annotation_source in har_config.json at the annotation JSON")
    print("2. Run: ./run.sh data")
    print("3. Run: ./run.sh embed && ./run.sh train")
    print("4. Run: ./run.sh report")
    print("\nResults are written under runs/<experiment>/ (leaderboard.md, anova.json, errors/, explain/)")


if __name__ == "__main__":
    main()
