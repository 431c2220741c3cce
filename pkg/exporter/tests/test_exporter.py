import importlib.util
import json

import numpy as np
import pytest

from snapexport import CheckpointError, ExportError, export, read_checkpoint
from snapexport.cli import main as cli_main
from snapexport.skeleton import TINY_VGG_WIDTHS, VGG16_PLAN

HAS_TORCH = importlib.util.find_spec("torch") is not None

# frozen against the pruning toolkit's own vgg16 fixture (3x32x32, 10 classes)
VGG16_BASELINE_FLOPS = 313201664


def synth_state(widths_plan, in_channels=3, num_classes=10, seed=0, classifier_in=None):
    """Random f32 state dict with framework-style parameter names."""
    rng = np.random.default_rng(seed)
    state = {}
    cin = in_channels
    idx = 0
    for item in widths_plan:
        if item == "M":
            idx += 1
            continue
        state[f"features.{idx}.weight"] = rng.normal(size=(item, cin, 3, 3)).astype(np.float32)
        state[f"features.{idx}.bias"] = rng.normal(size=item).astype(np.float32)
        state[f"features.{idx + 1}.weight"] = rng.uniform(0.5, 1.5, item).astype(np.float32)
        state[f"features.{idx + 1}.bias"] = rng.normal(size=item).astype(np.float32)
        state[f"features.{idx + 1}.running_mean"] = rng.normal(size=item).astype(np.float32)
        state[f"features.{idx + 1}.running_var"] = rng.uniform(0.5, 2.0, item).astype(np.float32)
        state[f"features.{idx + 1}.num_batches_tracked"] = np.array(100, dtype=np.int64)
        cin = item
        idx += 3
    classifier_in = cin if classifier_in is None else classifier_in
    state["classifier.weight"] = rng.normal(size=(num_classes, classifier_in)).astype(np.float32)
    state["classifier.bias"] = rng.normal(size=num_classes).astype(np.float32)
    return state


def vgg16_state(seed=0, num_classes=10):
    return synth_state(VGG16_PLAN, seed=seed, num_classes=num_classes)


def tiny_state(seed=0, num_classes=4):
    return synth_state([w for w in TINY_VGG_WIDTHS], seed=seed, num_classes=num_classes)


def save_npz(tmp_path, state, name="ckpt.npz"):
    path = tmp_path / name
    np.savez(path, **state)
    return path


def test_export_bit_exact_and_cost(tmp_path):
    from prunekit.cost import baseline_cost
    from prunekit.model_ir import load_snapshot

    state = vgg16_state()
    ckpt = save_npz(tmp_path, state)
    manifest, blob = tmp_path / "m.json", tmp_path / "w.bin"
    summary = export(ckpt, "vgg16", manifest, blob)
    assert len(summary.mapped) == 13 * 6 + 2
    assert summary.converted == []

    snap = load_snapshot(manifest, blob)
    assert baseline_cost(snap).flops == VGG16_BASELINE_FLOPS
    for src, dst in summary.mapped.items():
        assert np.array_equal(snap.weights[dst], state[src]), (src, dst)
        assert snap.weights[dst].tobytes() == state[src].tobytes()


def test_export_load_save_roundtrip(tmp_path):
    from prunekit.model_ir import load_snapshot, save_snapshot

    ckpt = save_npz(tmp_path, tiny_state())
    m1, b1 = tmp_path / "m1.json", tmp_path / "b1.bin"
    export(ckpt, "tiny_vgg", m1, b1)
    snap = load_snapshot(m1, b1)
    m2, b2 = tmp_path / "m2.json", tmp_path / "b2.bin"
    save_snapshot(snap, m2, b2)
    # the exporter packs tensors in the same canonical order as the library
    assert b1.read_bytes() == b2.read_bytes()


def test_unexpected_key_fails_closed(tmp_path):
    state = tiny_state()
    state["features.99.weight"] = np.zeros(3, dtype=np.float32)
    ckpt = save_npz(tmp_path, state)
    with pytest.raises(ExportError, match="features.99.weight"):
        export(ckpt, "tiny_vgg", tmp_path / "m.json", tmp_path / "b.bin")


def test_missing_key_fails_closed(tmp_path):
    state = tiny_state()
    del state["features.3.weight"]
    ckpt = save_npz(tmp_path, state)
    with pytest.raises(ExportError, match="missing.*features.3.weight"):
        export(ckpt, "tiny_vgg", tmp_path / "m.json", tmp_path / "b.bin")


def test_wrong_shape_fails(tmp_path):
    state = tiny_state()
    state["features.0.weight"] = state["features.0.weight"][:, :, :2, :2]
    ckpt = save_npz(tmp_path, state)
    with pytest.raises(ExportError, match="shape"):
        export(ckpt, "tiny_vgg", tmp_path / "m.json", tmp_path / "b.bin")


def test_nonpositive_variance_fails(tmp_path):
    state = tiny_state()
    state["features.1.running_var"] = np.zeros_like(state["features.1.running_var"])
    ckpt = save_npz(tmp_path, state)
    with pytest.raises(ExportError, match="running_var"):
        export(ckpt, "tiny_vgg", tmp_path / "m.json", tmp_path / "b.bin")


def test_float64_converted_with_warning(tmp_path):
    state = tiny_state()
    state["classifier.weight"] = state["classifier.weight"].astype(np.float64)
    ckpt = save_npz(tmp_path, state)
    summary = export(ckpt, "tiny_vgg", tmp_path / "m.json", tmp_path / "b.bin")
    assert any("classifier.weight" in c for c in summary.converted)
    from prunekit.model_ir import load_snapshot
    snap = load_snapshot(tmp_path / "m.json", tmp_path / "b.bin")
    assert snap.weights["head.fc.w"].dtype == np.float32
    assert np.array_equal(snap.weights["head.fc.w"],
                          state["classifier.weight"].astype(np.float32))


def test_unknown_arch(tmp_path):
    ckpt = save_npz(tmp_path, tiny_state())
    with pytest.raises(ExportError, match="unknown architecture"):
        export(ckpt, "resnet56", tmp_path / "m.json", tmp_path / "b.bin")


def test_unrecognized_container(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError, match="unrecognized checkpoint container"):
        read_checkpoint(path)


def test_cli_roundtrip(tmp_path, capsys):
    ckpt = save_npz(tmp_path, tiny_state())
    rc = cli_main(["export", "--checkpoint", str(ckpt), "--arch", "tiny_vgg",
                   "--out-manifest", str(tmp_path / "m.json"),
                   "--out-blob", str(tmp_path / "b.bin")])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["arch"] == "tiny_vgg"
    assert summary["mapped_parameters"] == 4 * 6 + 2

    rc = cli_main(["export", "--checkpoint", str(tmp_path / "nope.npz"),
                   "--arch", "tiny_vgg",
                   "--out-manifest", str(tmp_path / "m.json"),
                   "--out-blob", str(tmp_path / "b.bin")])
    assert rc == 1
    assert "error" in capsys.readouterr().err


# -- torch interop (optional: exercised when the framework is installed) -----

def _torch_tiny_module(num_classes=4):
    import torch.nn as nn

    layers = []
    cin = 3
    for width in TINY_VGG_WIDTHS:
        layers += [nn.Conv2d(cin, width, 3, padding=1),
                   nn.BatchNorm2d(width), nn.ReLU()]
        cin = width

    class Net(nn.Module):
        def __init__(self):
            super().__init__()
            self.features = nn.Sequential(*layers)
            self.classifier = nn.Linear(cin, num_classes)

        def forward(self, x):
            x = self.features(x)
            x = x.mean(dim=(2, 3))
            return self.classifier(x)

    return Net()


@pytest.mark.skipif(not HAS_TORCH, reason="source framework not installed")
def test_torch_zip_checkpoint_reading(tmp_path):
    import torch

    net = _torch_tiny_module()
    path = tmp_path / "ckpt.pth"
    torch.save(net.state_dict(), path)
    params = read_checkpoint(path)
    for name, tensor in net.state_dict().items():
        assert name in params
        assert np.array_equal(params[name], tensor.numpy()), name


@pytest.mark.skipif(not HAS_TORCH, reason="source framework not installed")
def test_forward_agreement_with_source(tmp_path):
    import torch

    from prunekit import engine
    from prunekit.model_ir import load_snapshot

    torch.manual_seed(0)
    net = _torch_tiny_module()
    net.eval()
    path = tmp_path / "ckpt.pth"
    torch.save(net.state_dict(), path)
    manifest, blob = tmp_path / "m.json", tmp_path / "b.bin"
    export(path, "tiny_vgg", manifest, blob)
    snap = load_snapshot(manifest, blob)

    probe = np.random.default_rng(1).uniform(0, 1, (4, 3, 16, 16)).astype(np.float32)
    with torch.no_grad():
        want = net(torch.from_numpy(probe)).numpy()
    got, _ = engine.forward(snap, probe, mode="eval")
    assert np.max(np.abs(got - want)) < 1e-4
