"""Diagonal-Gaussian control policy, scripted-teacher rollouts, and
behavioral cloning of teacher trajectories onto the full action space."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import (Network, ParamStore, Tensor, backward, adam_step, dense,
                 save_checkpoint, load_checkpoint)

LOG_2PI = math.log(2.0 * math.pi)
INIT_LOG_STD = math.log(0.35)
BC_RESTART_LOG_STD = math.log(0.6)


class PolicyError(RuntimeError):
    pass


class GaussianPolicy:
    """tanh-bounded mean network plus one global trainable log-std vector.

    Actions are clamped to [-1, 1] after sampling; log-probabilities are
    always evaluated at the pre-clamp sample under the unclamped Gaussian.
    """

    def __init__(self, obs_dim: int, act_dim: int, hidden=(64, 64),
                 init_log_std=INIT_LOG_STD,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.hidden = tuple(hidden)
        layers = []
        prev = obs_dim
        for h in hidden:
            layers.append(dense(prev, h, "relu"))
            prev = h
        layers.append(dense(prev, act_dim, "tanh"))
        self.net = Network(layers, (obs_dim,), rng=rng, prefix="pi")
        self.store: ParamStore = self.net.store
        ls = (np.full(act_dim, float(init_log_std)) if np.isscalar(init_log_std)
              else np.asarray(init_log_std, dtype=np.float64))
        if ls.shape != (act_dim,):
            raise ValueError(f"init_log_std needs {act_dim} entries, got {ls.shape}")
        self.store.add("log_std", ls)

    @property
    def log_std(self) -> np.ndarray:
        return self.store["log_std"].data

    def mean(self, obs: np.ndarray) -> np.ndarray:
        return self.net.forward_np(obs)

    def act(self, obs: np.ndarray, rng: np.random.Generator,
            deterministic: bool = False):
        mu = self.net.forward_np(obs)
        if not np.all(np.isfinite(mu)):
            raise PolicyError("non-finite policy mean")
        if deterministic:
            pre = mu
        else:
            pre = mu + np.exp(self.log_std) * rng.standard_normal(self.act_dim)
        action = np.clip(pre, -1.0, 1.0)
        return action, self._log_prob_single(pre, mu)

    def _log_prob_single(self, pre: np.ndarray, mu: np.ndarray) -> float:
        ls = self.log_std
        z = (pre - mu) * np.exp(-ls)
        return float(-0.5 * np.dot(z, z) - ls.sum() - 0.5 * self.act_dim * LOG_2PI)

    def log_prob_np(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        mu = self.net.forward_np(obs)
        ls = self.log_std
        z = (actions - mu) * np.exp(-ls)[None, :]
        return (-0.5 * (z * z).sum(axis=1) - ls.sum()
                - 0.5 * self.act_dim * LOG_2PI)

    def log_prob_tensor(self, obs: np.ndarray, actions: np.ndarray) -> Tensor:
        """Per-sample log-probability vector with a recorded graph."""
        mu = self.net.forward(obs)
        ls = self.store["log_std"]
        inv_std = ls.scale(-1.0).exp()
        z = (Tensor(actions) - mu).mul_row(inv_std)
        quad = z.square().sum_axis1().scale(-0.5)
        return quad.add_scalar_tensor(ls.sum(), coeff=-1.0) \
                   .add_const(-0.5 * self.act_dim * LOG_2PI)

    def distribution(self, obs: np.ndarray):
        return self.net.forward_np(obs), self.log_std.copy()

    def entropy(self) -> float:
        return float(self.log_std.sum() + 0.5 * self.act_dim * (1.0 + LOG_2PI))

    def kl_tensor(self, obs: np.ndarray, old_mu: np.ndarray,
                  old_log_std: np.ndarray) -> Tensor:
        """Mean KL(old || current) over the batch, with a recorded graph."""
        mu = self.net.forward(obs)
        ls = self.store["log_std"]
        n, d = old_mu.shape
        var_old = np.exp(2.0 * old_log_std)
        inv_var_new = ls.scale(-2.0).exp()
        sq = (Tensor(old_mu) - mu).square().add_row(Tensor(var_old))
        per_dim = sq.mul_row(inv_var_new).scale(0.5)
        total = per_dim.sum().add_scalar_tensor(ls.sum(), coeff=float(n)) \
            .add_const(float(n) * (-old_log_std.sum() - 0.5 * d))
        return total.scale(1.0 / n)

    def fisher_vector_product(self, obs: np.ndarray, v: np.ndarray,
                              damping: float = 0.0) -> np.ndarray:
        """Exact mean-KL Hessian product at the current parameters.

        The mean-network block is the Gauss-Newton form J^T diag(1/sigma^2) J
        (equal to the KL Hessian at the expansion point), the log-std block
        is the constant 2*I, cross blocks vanish.
        """
        tangents = {}
        i = 0
        v_logstd = None
        for name, t in self.store.items():
            n = t.data.size
            seg = v[i:i + n].reshape(t.data.shape)
            if name == "log_std":
                v_logstd = seg
            else:
                tangents[name] = seg
            i += n
        dmu = self.net.jvp(obs, tangents)
        batch = obs.shape[0]
        w = dmu * np.exp(-2.0 * self.log_std)[None, :] / batch
        self.store.zero_grad()
        mu = self.net.forward(obs)
        backward((mu * Tensor(w)).sum())
        parts = []
        for name, t in self.store.items():
            if name == "log_std":
                parts.append(2.0 * v_logstd.ravel())
            else:
                g = t.grad if t.grad is not None else np.zeros_like(t.data)
                parts.append(g.ravel())
        out = np.concatenate(parts)
        self.store.zero_grad()
        return out + damping * v

    # -- persistence --------------------------------------------------------

    def save(self, path, extra_meta: dict | None = None):
        meta = {"kind": "policy", "obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "hidden": list(self.hidden)}
        meta.update(extra_meta or {})
        save_checkpoint(path, self.store.state_arrays(), meta)

    @staticmethod
    def load(path) -> "GaussianPolicy":
        arrays, meta = load_checkpoint(path)
        pol = GaussianPolicy(meta["obs_dim"], meta["act_dim"],
                             hidden=tuple(meta["hidden"]))
        pol.store.load_state_arrays(arrays)
        return pol


def kl_diag_gaussians(mu_p, log_std_p, mu_q, log_std_q) -> float:
    """Mean over the batch of KL(p || q) for diagonal Gaussians."""
    var_p = np.exp(2.0 * log_std_p)
    var_q = np.exp(2.0 * log_std_q)
    per_dim = (log_std_q - log_std_p
               + (var_p + (mu_p - mu_q) ** 2) / (2.0 * var_q) - 0.5)
    return float(per_dim.sum(axis=1).mean())


# -- teacher rollouts and behavioral cloning ---------------------------------

@dataclass
class BCDataset:
    observations: np.ndarray  # (N, obs_dim)
    actions: np.ndarray       # (N, 5) in [-1, 1]

    def __post_init__(self):
        if np.abs(self.actions).max(initial=0.0) > 1.0 + 1e-12:
            raise ValueError("teacher actions outside [-1, 1]")

    def __len__(self):
        return len(self.observations)


def run_teacher(env, policy: GaussianPolicy, episode_seed: int,
                rng: np.random.Generator, deterministic: bool = True):
    """One reduced-action episode; records (obs, overlay-expanded action)
    pairs plus the episode success flag."""
    obs = env.reset(episode_seed)
    pairs = []
    success = False
    while True:
        action, _ = policy.act(obs, rng, deterministic=deterministic)
        tr = env.step(action)
        pairs.append((obs, tr.full_action))
        success = tr.success
        if tr.terminal:
            break
        obs = tr.observation
    return pairs, success


def harvest_bc_dataset(env, policy: GaussianPolicy, n_pairs: int,
                       seed_fn, rng: np.random.Generator,
                       deterministic: bool = True) -> BCDataset:
    obs_rows, act_rows = [], []
    episode = 0
    while len(obs_rows) < n_pairs:
        pairs, _ = run_teacher(env, policy, seed_fn(episode), rng,
                               deterministic=deterministic)
        for o, a in pairs:
            obs_rows.append(o)
            act_rows.append(a)
        episode += 1
    return BCDataset(np.array(obs_rows[:n_pairs]), np.array(act_rows[:n_pairs]))


def behavioral_clone(ds: BCDataset, epochs: int, lr: float = 1e-3,
                     batch: int = 256, hidden=(64, 64),
                     rng: np.random.Generator | None = None,
                     holdout_frac: float = 0.1,
                     restart_log_std: float = BC_RESTART_LOG_STD):
    """Fit a 5-dim policy's pre-tanh means to atanh-mapped teacher actions.

    Returns (policy, history); history carries per-epoch training loss on the
    atanh scale and held-out MSE in action space.
    """
    if len(ds) < 1:
        raise ValueError("empty BC dataset")
    rng = rng if rng is not None else np.random.default_rng(0)
    pol = GaussianPolicy(ds.observations.shape[1], ds.actions.shape[1],
                         hidden=hidden, init_log_std=restart_log_std, rng=rng)
    targets = np.arctanh(np.clip(ds.actions, -1.0 + 1e-6, 1.0 - 1e-6))

    idx = rng.permutation(len(ds))
    n_hold = int(len(ds) * holdout_frac)
    hold_idx, train_idx = idx[:n_hold], idx[n_hold:]
    if len(train_idx) == 0:
        train_idx = idx
    obs_tr, tgt_tr = ds.observations[train_idx], targets[train_idx]
    obs_ho = ds.observations[hold_idx] if n_hold else obs_tr
    act_ho = ds.actions[hold_idx] if n_hold else ds.actions[train_idx]

    history = {"train": [], "holdout_action_mse": []}
    zero_ls = np.zeros_like(pol.log_std)
    for _ in range(epochs):
        order = rng.permutation(len(obs_tr))
        losses = []
        for lo in range(0, len(obs_tr), batch):
            sel = order[lo:lo + batch]
            pre = pol.net.forward(obs_tr[sel], final_activation=False)
            loss = (pre - Tensor(tgt_tr[sel])).square().mean()
            val = loss.item()
            if not np.isfinite(val):
                raise PolicyError("behavioral cloning diverged")
            pol.store.zero_grad()
            backward(loss)
            pol.store["log_std"].grad = zero_ls.copy()
            adam_step(pol.store, lr)
            losses.append(val)
        history["train"].append(float(np.mean(losses)))
        mse = float(((pol.net.forward_np(obs_ho) - act_ho) ** 2).mean())
        history["holdout_action_mse"].append(mse)
    return pol, history
