import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List

import numpy as np

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Offsets added to the run seed, one per source of randomness.
SEED_OFFSETS = {
    'data_train': 0,
    'data_valid': 1,
    'data_test': 2,
    'phase1_init': 10,
    'phase1_train': 11,
    'classifier_init': 12,
    'rl': 20,
    'latent_sample': 21,
    'filter_init': 30,
}


def setup_logging(level: str = "INFO"):
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)


def derive_seed(seed: int, offset: int) -> int:
    """Independent 64-bit stream for (seed, offset)."""
    state = np.random.SeedSequence([seed, offset]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def phase_seed(seed: int, phase: str, index: int = 0) -> int:
    return derive_seed(seed, SEED_OFFSETS[phase] + index)


def export_to_json(data, filepath: str):
    Path(filepath).parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False)


def load_from_json(filepath: str):
    with open(filepath, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_lines(lines: Iterable[str], filepath: str):
    Path(filepath).parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, 'w', encoding='utf-8') as f:
        for line in lines:
            f.write(line + '\n')


def parse_key_values(lines: Iterable[str], separator: str = '=') -> Dict[str, str]:
    """Flat 'key<sep>value' lines; '#' comments and blank lines are skipped."""
    values: Dict[str, str] = {}
    for line in lines:
        text = line.split('#', 1)[0].strip()
        if not text:
            continue
        key, sep, value = text.partition(separator)
        if not sep:
            raise ValueError(f"expected 'key{separator}value', got {line.strip()!r}")
        values[key.strip()] = value.strip()
    return values


def read_lines(filepath: str) -> List[str]:
    with open(filepath, 'r', encoding='utf-8') as f:
        return f.read().splitlines()
