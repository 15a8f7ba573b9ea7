"""Central finite-difference gradient oracle for torch modules (float64)."""

import torch


def fd_relative_error(loss_fn, params, step=1e-4, n_entries=12, seed=0):
    """Relative error ||g_autograd - g_fd|| / ||g_fd|| over entries sampled from all ``params``.

    Entries from every parameter are pooled into one vector, so a parameter whose
    exact gradient vanishes (e.g. a bias that cancels) is judged on roundoff
    against the whole gradient rather than against itself.

    ``loss_fn`` takes no arguments and returns a scalar tensor depending on ``params``.
    """
    gen = torch.Generator().manual_seed(seed)
    grads = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    num, ana = [], []
    for p, g in zip(params, grads):
        g = torch.zeros_like(p) if g is None else g
        flat = p.data.view(-1)
        idx = torch.randperm(flat.numel(), generator=gen)[:n_entries]
        for i in idx.tolist():
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
            num.append((up - down) / (2 * step))
            ana.append(g.view(-1)[i].item())
    num, ana = torch.tensor(num), torch.tensor(ana)
    return (num - ana).norm().item() / max(num.norm().item(), 1e-12)


def weighted_sum(out, seed=1):
    """Scalar probe ``sum(out * r)`` with a fixed random ``r``."""
    gen = torch.Generator().manual_seed(seed)
    r = torch.randn(out.shape, generator=gen, dtype=out.dtype)
    return (out * r).sum()
