"""Central finite-difference verification of every backward pass.

The harness perturbs tensor entries in place, re-evaluates a scalar
projection loss and compares the numeric slope against the hand-derived
gradient. Large tensors are spot-checked on a seeded sample of
coordinates; the error metric is normalized by the largest gradient
magnitude so near-zero entries do not drown the check in roundoff noise.
"""

import numpy as np

from . import layers as L
from . import tensor as T

# small enough that a perturbation almost never pushes a near-zero relu
# input across its kink (which would poison the central difference), while
# still two orders of magnitude above the float64 cancellation floor
FD_STEP = 1e-6

# per-component pass tolerances; single layers are held tighter than stacks
LAYER_TOL = 1e-5
BLOCK_TOL = 1e-4


def numeric_grad(loss_fn, arr, coords, h=FD_STEP):
    """Central differences of loss_fn w.r.t. arr at the given flat coords."""
    out = np.empty(len(coords))
    flat = arr.reshape(-1)
    for i, idx in enumerate(coords):
        orig = flat[idx]
        flat[idx] = orig + h
        fp = loss_fn()
        flat[idx] = orig - h
        fm = loss_fn()
        flat[idx] = orig
        out[i] = (fp - fm) / (2 * h)
    return out


def grad_error(analytic, numeric_at, full_analytic):
    """max |a - n| over checked coords, relative to the gradient scale."""
    scale = max(np.max(np.abs(full_analytic), initial=0.0),
                np.max(np.abs(numeric_at), initial=0.0), 1e-10)
    return float(np.max(np.abs(analytic - numeric_at), initial=0.0) / scale)


def _pick_coords(rng, size, max_coords):
    if size <= max_coords:
        return np.arange(size)
    return rng.choice(size, size=max_coords, replace=False)


def check_gradients(forward, backward, params, inputs, seed, max_coords=16, h=FD_STEP):
    """Verify parameter and input gradients of one module.

    forward() must recompute the output from the current contents of the
    parameter values and `inputs` (perturbed in place). backward(grad)
    must populate param.grad and return per-input gradients, matching the
    order of `inputs`. Returns the worst relative error seen.
    """
    rng = np.random.default_rng(seed + 1_000_003)
    out = forward()
    proj = rng.standard_normal(out.shape)

    def loss_fn():
        return float(np.sum(proj * forward()))

    params.zero_grads()
    forward()
    input_grads = backward(proj)
    if input_grads is None:
        input_grads = []
    elif isinstance(input_grads, np.ndarray):
        input_grads = [input_grads]

    worst = 0.0
    for p in params.trainable():
        coords = _pick_coords(rng, p.value.size, max_coords)
        num = numeric_grad(loss_fn, p.value, coords, h)
        worst = max(worst, grad_error(p.grad.reshape(-1)[coords], num, p.grad))
    for x, gx in zip(inputs, input_grads):
        coords = _pick_coords(rng, x.size, max_coords)
        num = numeric_grad(loss_fn, x, coords, h)
        worst = max(worst, grad_error(gx.reshape(-1)[coords], num, gx))
    params.zero_grads()
    return worst


# ---------------------------------------------------------------------------
# Component registry used by the acceptance suite and the CLI
# ---------------------------------------------------------------------------

def _check_conv2d(seed):
    rng = np.random.default_rng(seed)
    params = L.ParameterSet()
    layer = L.Conv2DLayer(params, "conv", 2, 3, kernel=(3, 3), stride=(2, 2),
                          padding="same", rng=rng)
    x = rng.standard_normal((2, 2, 5, 6))
    return check_gradients(lambda: layer.forward(x), layer.backward, params, [x], seed)


def _check_fully_connected(seed):
    rng = np.random.default_rng(seed)
    params = L.ParameterSet()
    layer = L.FullyConnected(params, "fc", 7, 4, rng=rng)
    x = rng.standard_normal((3, 7))
    return check_gradients(lambda: layer.forward(x), layer.backward, params, [x], seed)


def _check_batchnorm(seed, mode):
    rng = np.random.default_rng(seed)
    params = L.ParameterSet()
    layer = L.BatchNorm2D(params, "bn", 3)
    layer.gamma.value[...] = rng.uniform(0.5, 1.5, 3)
    layer.beta.value[...] = rng.standard_normal(3)
    layer.running_mean.value[...] = rng.standard_normal(3)
    layer.running_var.value[...] = rng.uniform(0.5, 2.0, 3)
    x = rng.standard_normal((2, 3, 4, 5))
    return check_gradients(lambda: layer.forward(x, mode), layer.backward, params, [x], seed)


def _check_instance_norm(seed):
    from .vc import InstanceNorm1D
    rng = np.random.default_rng(seed)
    norm = InstanceNorm1D()
    x = rng.standard_normal((2, 3, 7))
    empty = L.ParameterSet()
    return check_gradients(lambda: norm.forward(x), norm.backward, empty, [x], seed)


def _check_se_block(seed):
    from .seresnet import SEBlock
    rng = np.random.default_rng(seed)
    params = L.ParameterSet()
    se = SEBlock(params, "se", channels=8, reduction=4, rng=rng)
    x = rng.standard_normal((2, 8, 3, 4))
    return check_gradients(lambda: se.forward(x), se.backward, params, [x], seed)


def _check_resnet_se_block(seed):
    from .seresnet import ResNetSEBlock
    rng = np.random.default_rng(seed)
    params = L.ParameterSet()
    block = ResNetSEBlock(params, "block", in_ch=4, out_ch=4, stride=(2, 2),
                          reduction=2, rng=rng)
    x = rng.standard_normal((2, 4, 6, 8))
    return check_gradients(lambda: block.forward(x, "train"),
                           block.backward, params, [x], seed)


def _check_attention_pooling(seed):
    from .pooling import AttentionBlock, StatsPooling
    rng = np.random.default_rng(seed)
    params = L.ParameterSet()
    attn = AttentionBlock(params, "attn", feat_dim=6, hidden=5, rng=rng)
    pool = StatsPooling()
    h = rng.standard_normal((2, 4, 6))

    def forward():
        alpha = attn.forward(h)
        return pool.forward(h, alpha)

    def backward(g):
        gh, galpha = pool.backward(g)
        gh += attn.backward(galpha)
        return gh

    return check_gradients(forward, backward, params, [h], seed)


def _check_encoder_tiny(seed):
    from .pooling import SpeakerEncoder
    from .seresnet import EncoderConfig
    rng = np.random.default_rng(seed)
    cfg = EncoderConfig(mel_bands=8, channels=(4, 4, 4), reduction=2,
                        attn_hidden=5, bottleneck=6)
    params = L.ParameterSet()
    enc = SpeakerEncoder(params, cfg, rng=rng)
    x = rng.standard_normal((2, 1, 8, 9))
    return check_gradients(lambda: enc.forward(x, "train"), enc.backward,
                           params, [x], seed, max_coords=6)


def _check_content_encoder(seed):
    from .vc import ContentEncoder
    rng = np.random.default_rng(seed)
    params = L.ParameterSet()
    net = ContentEncoder(params, mel_bands=6, channels=4, kernel=3, rng=rng)
    x = rng.standard_normal((2, 6, 7))
    return check_gradients(lambda: net.forward(x), net.backward, params, [x], seed)


def _check_decoder(seed):
    from .vc import Decoder
    rng = np.random.default_rng(seed)
    params = L.ParameterSet()
    net = Decoder(params, mel_bands=6, channels=4, kernel=3, embed_dim=5, rng=rng)
    x = rng.standard_normal((2, 4, 7))
    emb = rng.standard_normal((2, 5))

    def backward(g):
        gx, gemb = net.backward(g)
        return [gx, gemb]

    return check_gradients(lambda: net.forward(x, emb), backward, params,
                           [x, emb], seed)


COMPONENTS = [
    ("conv2d", _check_conv2d, LAYER_TOL),
    ("fully_connected", _check_fully_connected, LAYER_TOL),
    ("batchnorm2d_train", lambda s: _check_batchnorm(s, "train"), LAYER_TOL),
    ("batchnorm2d_eval", lambda s: _check_batchnorm(s, "eval"), LAYER_TOL),
    ("instance_norm", _check_instance_norm, LAYER_TOL),
    ("se_block", _check_se_block, BLOCK_TOL),
    ("resnet_se_block", _check_resnet_se_block, BLOCK_TOL),
    ("attention_stats_pooling", _check_attention_pooling, BLOCK_TOL),
    ("content_encoder", _check_content_encoder, BLOCK_TOL),
    ("decoder", _check_decoder, BLOCK_TOL),
    ("encoder_tiny", _check_encoder_tiny, BLOCK_TOL),
]


def run_suite(n_seeds=20, components=None):
    """Run every registered finite-difference check over n_seeds seeds.

    Returns a list of (name, worst_error, tolerance, passed) tuples.
    """
    results = []
    for name, fn, tol in COMPONENTS:
        if components is not None and name not in components:
            continue
        worst = 0.0
        for seed in range(n_seeds):
            worst = max(worst, fn(seed))
        results.append((name, worst, tol, worst < tol))
    return results
