"""Analytic-vs-central-finite-difference gradient comparison for the
end-to-end model, shared by the model tests and the acceptance gate."""
import time

import torch

from edei.model import DualExposureNet, ModelConfig
from edei.training import loss

GRAD_CFG = ModelConfig(
    base_channels=4,
    num_scales=1,
    attn_heads=1,
    dcn_groups=1,
    event_bins=2,
    image_channels=3,
    res_blocks=1,
    ffn_expansion=2,
)
LAMBDAS = (1.0, 1.0, 0.5)


def run_gradient_check(seed: int = 0) -> dict:
    """Check every parameter element of a tiny float64 model against central
    finite differences of the three-term training loss.

    Parameters are randomized: the zero-initialized offset and fusion convs
    must carry gradient, and sampling positions must sit away from the
    non-smooth integer points of bilinear interpolation.
    """
    start = time.time()
    torch.manual_seed(seed)
    model = DualExposureNet(GRAD_CFG).double()
    g = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(0.1 * torch.randn(p.shape, generator=g, dtype=torch.float64))

    gi = torch.Generator().manual_seed(99)
    mk = lambda c: torch.rand(1, c, 16, 16, generator=gi, dtype=torch.float64)
    inputs = (mk(3), mk(2), mk(3), mk(2))
    # target a fixed margin below every prediction: no absolute-error kink
    # sits inside the finite-difference step
    with torch.no_grad():
        out0 = model(*inputs)
        floor = torch.minimum(torch.minimum(out0.fused, out0.enhanced), out0.deblurred)
        target = floor - 0.25

    def objective():
        out = model(*inputs)
        return loss(out.fused, out.enhanced, out.deblurred, target, LAMBDAS)

    model.zero_grad()
    objective().backward()
    analytic = {n: p.grad.clone() for n, p in model.named_parameters()}

    failures = 0
    total = 0
    worst = 0.0
    with torch.no_grad():
        for name, param in model.named_parameters():
            flat = param.reshape(-1)
            grad = analytic[name].reshape(-1)
            for i in range(flat.numel()):
                theta = flat[i].item()
                h = 1e-6 * (1.0 + abs(theta))
                flat[i] = theta + h
                hi = objective().item()
                flat[i] = theta - h
                lo = objective().item()
                flat[i] = theta
                fd = (hi - lo) / (2 * h)
                an = grad[i].item()
                # below 1e-7 the central difference itself is numerical noise
                rel = abs(fd - an) / max(abs(fd), abs(an), 1e-7)
                worst = max(worst, rel)
                total += 1
                if rel >= 1e-3:
                    failures += 1
    return {
        "total": total,
        "fraction_ok": 1.0 - failures / total,
        "worst_rel_err": worst,
        "elapsed_s": time.time() - start,
    }
