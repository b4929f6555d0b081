"""Self-describing checkpoint container shared by the codec and the denoiser.

Layout: a single torch-serialized dict with a format tag, a version, the kind
of model, its config header, and the named weight arrays (state_dict). Extra
entries (optimizer state, epoch counters, RNG seeds) ride along for resume.
"""

import torch

FORMAT_TAG = "latentseg-checkpoint"
FORMAT_VERSION = 1


def save_checkpoint(path, kind: str, config: dict, state_dict: dict, extra: dict | None = None):
    payload = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "kind": kind,
        "config": dict(config),
        "state_dict": state_dict,
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_checkpoint(path, expect_kind: str | None = None) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != FORMAT_TAG:
        raise ValueError(f"{path} is not a {FORMAT_TAG} file")
    if payload.get("version", 0) > FORMAT_VERSION:
        raise ValueError(
            f"checkpoint version {payload['version']} is newer than supported {FORMAT_VERSION}"
        )
    if expect_kind is not None and payload.get("kind") != expect_kind:
        raise ValueError(f"expected kind {expect_kind!r}, found {payload.get('kind')!r}")
    return payload
