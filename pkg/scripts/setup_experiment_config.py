#!/usr/bin/env python3
"""
Experiment Configuration Setup Script
Writes a config template or validates an existing config file
"""

import os
import sys
from pathlib import Path

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core.config import SpoofCueSettings, write_config_template
from src.monitoring.error import ConfigurationError

DEFAULT_CONFIG = "spoofcue.env"
DEFAULT_TEMPLATE = "spoofcue.env.template"


def create_config_template(path: str = DEFAULT_TEMPLATE) -> Path:
    """Create a template listing every key with its default value"""
    template_path = write_config_template(path)
    print(f"✅ Created {template_path}")
    print("📝 Next steps:")
    print(f"   1. Copy {template_path} to {DEFAULT_CONFIG}")
    print("   2. Edit the values for your experiment")
    print(f"   3. Run: python scripts/setup_experiment_config.py validate {DEFAULT_CONFIG}")
    return template_path


def validate_config_file(path: str = DEFAULT_CONFIG) -> bool:
    """Validate that a config file loads and passes cross-section checks"""
    if not Path(path).exists():
        print(f"❌ {path} not found")
        print("📝 Run: python scripts/setup_experiment_config.py template")
        return False

    try:
        settings = SpoofCueSettings.from_config_file(path)
    except ConfigurationError as e:
        print(f"❌ {e}")
        return False

    report = settings.validate_configuration()
    for warning in report["warnings"]:
        print(f"⚠️  {warning}")
    for recommendation in report["recommendations"]:
        print(f"💡 {recommendation}")
    if not report["valid"]:
        for error in report["errors"]:
            print(f"❌ {error}")
        return False

    print(f"✅ {path} is valid")
    print(f"   Generator: input {settings.generator.input_size}px, taps {','.join(settings.generator.tap_layers)}")
    print(f"   Loss weights: {settings.loss_weights.alpha1}, {settings.loss_weights.alpha2}, {settings.loss_weights.alpha3}")
    print(f"   Training: {settings.train.epochs} epochs, batch {settings.train.batch_size}, lr {settings.train.base_lr}")
    return True


def main() -> int:
    """Main setup function"""
    print("🧪 Spoof Cue Experiment Configuration")
    print("=" * 50)

    if len(sys.argv) > 1 and sys.argv[1] == "template":
        create_config_template(*sys.argv[2:3])
        return 0
    if len(sys.argv) > 1 and sys.argv[1] == "validate":
        return 0 if validate_config_file(*sys.argv[2:3]) else 1

    print("Usage:")
    print("  python setup_experiment_config.py template [PATH]  # Create a config template")
    print("  python setup_experiment_config.py validate [PATH]  # Validate a config file")
    return 2


if __name__ == "__main__":
    sys.exit(main())
