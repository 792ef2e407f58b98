"""Trust-region policy optimization: on-policy rollout collection,
generalized advantage estimation over a value baseline, conjugate-gradient
natural steps on Fisher-vector products, and KL-constrained backtracking."""

from __future__ import annotations

import collections
import csv
import json
import math
import os
from dataclasses import dataclass, field, replace, asdict

import numpy as np

from .curriculum import CurriculumSpec, CurriculumState, single_stage_spec
from .env import EpisodeConfig, PickEnv
from .nn import (Network, Tensor, backward, adam_step, dense,
                 save_checkpoint, load_checkpoint)
from .policy import GaussianPolicy, kl_diag_gaussians, INIT_LOG_STD
from . import streams


@dataclass(frozen=True)
class TrpoConfig:
    delta: float = 1e-2
    gamma: float = 0.99
    gae_lambda: float = 0.97
    cg_iters: int = 10
    cg_damping: float = 0.1
    backtrack_ratio: float = 0.8
    max_backtracks: int = 10
    batch_size: int = 4000
    value_epochs: int = 5
    value_lr: float = 1e-3
    value_batch: int = 256
    workers: int = 1

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")


@dataclass
class RolloutBatch:
    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    terminals: np.ndarray
    episode_lengths: list[int]
    episode_successes: list[bool]
    episode_returns: list[float]

    @property
    def size(self) -> int:
        return len(self.rewards)


def conjugate_gradient(f_Ax, b: np.ndarray, iters: int = 10,
                       residual_tol: float = 1e-10) -> np.ndarray:
    """Solve Ax=b for SPD A given only the matrix-vector product."""
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rdotr = float(r @ r)
    for _ in range(iters):
        z = f_Ax(p)
        pz = float(p @ z)
        if pz <= 0:
            break
        alpha = rdotr / pz
        x += alpha * p
        r -= alpha * z
        new_rdotr = float(r @ r)
        if new_rdotr < residual_tol:
            break
        p = r + (new_rdotr / rdotr) * p
        rdotr = new_rdotr
    return x


def gae_advantages(rewards: np.ndarray, terminals: np.ndarray,
                   values: np.ndarray, gamma: float, lam: float):
    """Exponentially blended advantage estimates; terminals cut bootstrapping.

    Returns (advantages, value_targets) with targets = advantages + values.
    """
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        if terminals[t]:
            next_value = 0.0
            running = 0.0
        else:
            next_value = values[t + 1]
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    if std < 1e-12:
        return adv - adv.mean()
    return (adv - adv.mean()) / std


class ValueBaseline:
    """Small state-value regressor refit to fresh targets each iteration."""

    def __init__(self, obs_dim: int, hidden=(64, 64),
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        layers = []
        prev = obs_dim
        for h in hidden:
            layers.append(dense(prev, h, "relu"))
            prev = h
        layers.append(dense(prev, 1))
        self.net = Network(layers, (obs_dim,), rng=rng, prefix="v")
        self.obs_dim = obs_dim
        self.hidden = tuple(hidden)

    def predict(self, obs: np.ndarray) -> np.ndarray:
        return self.net.forward_np(obs)[:, 0]

    def fit(self, obs: np.ndarray, targets: np.ndarray,
            rng: np.random.Generator, epochs: int, lr: float, batch: int):
        tgt = targets[:, None]
        for _ in range(epochs):
            order = rng.permutation(len(obs))
            for lo in range(0, len(obs), batch):
                sel = order[lo:lo + batch]
                pred = self.net.forward(obs[sel])
                loss = (pred - Tensor(tgt[sel])).square().mean()
                self.net.store.zero_grad()
                backward(loss)
                adam_step(self.net.store, lr)

    def save(self, path):
        arrays = dict(self.net.store.state_arrays())
        snap = self.net.store.adam_snapshot()
        for k, v in snap.items():
            if k == "step_count":
                arrays["adam.step_count"] = np.array([v], dtype=np.int64)
            else:
                arrays[f"adam.{k}"] = v
        save_checkpoint(path, arrays,
                        {"kind": "value", "obs_dim": self.obs_dim,
                         "hidden": list(self.hidden)})

    @staticmethod
    def load(path) -> "ValueBaseline":
        arrays, meta = load_checkpoint(path)
        vb = ValueBaseline(meta["obs_dim"], hidden=tuple(meta["hidden"]))
        vb.net.store.load_state_arrays(
            {k: v for k, v in arrays.items() if not k.startswith("adam.")})
        snap = {"step_count": int(arrays["adam.step_count"][0])}
        for k, v in arrays.items():
            if k.startswith("adam.") and k != "adam.step_count":
                snap[k[len("adam."):]] = v
        vb.net.store.load_adam_snapshot(snap)
        return vb


@dataclass
class UpdateReport:
    accepted: bool
    kl_after: float = 0.0
    surrogate_improvement: float = 0.0
    backtracks: int = 0
    grad_norm: float = 0.0
    reason: str = ""


def natural_step(policy: GaussianPolicy, obs: np.ndarray, actions: np.ndarray,
                 old_log_probs: np.ndarray, advantages: np.ndarray,
                 cfg: TrpoConfig) -> UpdateReport:
    """One KL-constrained natural-gradient update of the policy in place.

    The importance-ratio surrogate is maximized; the full step is scaled to
    the trust-region boundary and backtracked until the mean KL fits under
    delta with a positive improvement, else the update is skipped.
    """
    store = policy.store
    theta0 = store.get_flat()

    def surrogate_value() -> float:
        ratio = np.exp(policy.log_prob_np(obs, actions) - old_log_probs)
        return float((ratio * advantages).mean())

    store.zero_grad()
    lp = policy.log_prob_tensor(obs, actions)
    ratio_t = (lp - Tensor(old_log_probs)).exp()
    backward((ratio_t * Tensor(advantages)).mean())
    g = store.get_flat_grad()
    store.zero_grad()
    if not np.all(np.isfinite(g)):
        return UpdateReport(False, reason="non-finite policy gradient")
    gnorm = float(np.linalg.norm(g))
    if gnorm < 1e-14:
        return UpdateReport(False, reason="zero policy gradient")

    def fvp(v):
        return policy.fisher_vector_product(obs, v, damping=cfg.cg_damping)

    direction = conjugate_gradient(fvp, g, iters=cfg.cg_iters)
    curvature = float(direction @ fvp(direction))
    if not np.isfinite(curvature) or curvature <= 0:
        return UpdateReport(False, grad_norm=gnorm, reason="non-positive curvature")
    full_step = math.sqrt(2.0 * cfg.delta / curvature) * direction

    old_mu, old_ls = policy.distribution(obs)
    sur0 = surrogate_value()
    scale = 1.0
    for k in range(cfg.max_backtracks):
        store.set_flat(theta0 + scale * full_step)
        new_mu, new_ls = policy.distribution(obs)
        kl = kl_diag_gaussians(old_mu, old_ls, new_mu, new_ls)
        improvement = surrogate_value() - sur0
        if np.isfinite(kl) and kl <= cfg.delta and improvement > 0:
            return UpdateReport(True, kl_after=kl,
                                surrogate_improvement=improvement,
                                backtracks=k, grad_norm=gnorm)
        scale *= cfg.backtrack_ratio
    store.set_flat(theta0)
    return UpdateReport(False, grad_norm=gnorm, reason="line search exhausted")


# -- rollout collection -------------------------------------------------------

def run_episode(env: PickEnv, policy: GaussianPolicy, episode_seed: int,
                policy_rng: np.random.Generator, deterministic: bool = False):
    """Roll one episode; returns per-step arrays and the outcome."""
    obs = env.reset(episode_seed)
    obs_rows, act_rows, logp_rows, rew_rows, term_rows = [], [], [], [], []
    ret = 0.0
    while True:
        action, logp = policy.act(obs, policy_rng, deterministic=deterministic)
        tr = env.step(action)
        obs_rows.append(obs)
        act_rows.append(action)
        logp_rows.append(logp)
        rew_rows.append(tr.reward)
        term_rows.append(tr.terminal)
        ret += tr.reward
        if tr.terminal:
            return (obs_rows, act_rows, logp_rows, rew_rows, term_rows,
                    tr.success, ret)
        obs = tr.observation


def collect_serial(env: PickEnv, policy: GaussianPolicy, batch_size: int,
                   curriculum: CurriculumState, policy_rng: np.random.Generator,
                   episode_seed_fn, episode_counter: int,
                   trace_cb=None) -> tuple[RolloutBatch, int]:
    """Run whole episodes until at least batch_size steps were gathered,
    reporting each outcome to the curriculum as it completes."""
    obs_all, act_all, logp_all, rew_all, term_all = [], [], [], [], []
    lengths, successes, returns = [], [], []
    total = 0
    while total < batch_size:
        params = curriculum.params()
        env.set_workspace(params["extent"], params["h_robot"],
                          params["h_lift"], params["n_max"])
        seed = episode_seed_fn(episode_counter)
        o, a, lp, r, tm, success, ret = run_episode(env, policy, seed, policy_rng)
        obs_all += o
        act_all += a
        logp_all += lp
        rew_all += r
        term_all += tm
        lengths.append(len(r))
        successes.append(success)
        returns.append(ret)
        total += len(r)
        advanced, lam = curriculum.record_and_maybe_advance(success)
        if trace_cb is not None:
            trace_cb(episode_counter, lam, curriculum.last_rate, success, advanced)
        episode_counter += 1
    batch = RolloutBatch(np.array(obs_all), np.array(act_all),
                         np.array(logp_all), np.array(rew_all),
                         np.array(term_all, dtype=bool),
                         lengths, successes, returns)
    return batch, episode_counter


def _worker_collect(args):
    (policy_arrays, policy_meta, episode_cfg, encoder, quota,
     workspace, run_seed, batch_index, worker_id) = args
    policy = GaussianPolicy(policy_meta["obs_dim"], policy_meta["act_dim"],
                            hidden=tuple(policy_meta["hidden"]))
    policy.store.load_state_arrays(policy_arrays)
    env = PickEnv(episode_cfg, encoder=encoder)
    env.set_workspace(**workspace)
    rng = streams.generator(run_seed, "worker", batch_index, worker_id, 0)
    rows = []
    ep = 0
    total = 0
    while total < quota:
        seed = streams.derive_int(run_seed, "worker", batch_index, worker_id, 1, ep)
        out = run_episode(env, policy, seed, rng)
        rows.append(out)
        total += len(out[3])
        ep += 1
    return rows


def collect_parallel(policy: GaussianPolicy, episode_cfg: EpisodeConfig,
                     encoder, batch_size: int, workers: int,
                     workspace: dict, run_seed: int, batch_index: int,
                     pool=None) -> RolloutBatch:
    """Fan episode collection out over worker processes; results merge in
    worker-id order so the batch is deterministic for a fixed worker count.
    The workspace is a per-batch snapshot (curriculum updates apply between
    batches in this mode)."""
    quota = int(math.ceil(batch_size / workers))
    meta = {"obs_dim": policy.obs_dim, "act_dim": policy.act_dim,
            "hidden": list(policy.hidden)}
    args = [(policy.store.state_arrays(), meta, episode_cfg, encoder, quota,
             workspace, run_seed, batch_index, w) for w in range(workers)]
    if pool is None:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(workers) as p:
            results = p.map(_worker_collect, args)
    else:
        results = pool.map(_worker_collect, args)
    obs_all, act_all, logp_all, rew_all, term_all = [], [], [], [], []
    lengths, successes, returns = [], [], []
    for rows in results:
        for o, a, lp, r, tm, success, ret in rows:
            obs_all += o
            act_all += a
            logp_all += lp
            rew_all += r
            term_all += tm
            lengths.append(len(r))
            successes.append(success)
            returns.append(ret)
    return RolloutBatch(np.array(obs_all), np.array(act_all),
                        np.array(logp_all), np.array(rew_all),
                        np.array(term_all, dtype=bool),
                        lengths, successes, returns)


# -- training driver ----------------------------------------------------------

LOG_COLUMNS = ("iteration", "env_steps", "success_rate_window", "lambda",
               "mean_kl", "surrogate_improvement", "mean_return")
TRACE_COLUMNS = ("episode", "lambda", "success_rate")


@dataclass
class TrainSettings:
    seed: int = 0
    task: str = "full"
    reward_mode: str = "sparse"
    curriculum: CurriculumSpec = field(default_factory=CurriculumSpec)
    use_curriculum: bool = True
    trpo: TrpoConfig = field(default_factory=TrpoConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    max_env_steps: int = 300_000
    stop_at_stage: int | None = None
    report_window: int = 200
    hidden: tuple = (64, 64)
    init_log_std: float = INIT_LOG_STD
    checkpoint_every: int = 1
    verbose: bool = False

    def resolved_curriculum(self) -> CurriculumSpec:
        return self.curriculum if self.use_curriculum else single_stage_spec(self.curriculum)


class Trainer:
    """Iterates collect -> advantages -> natural step, logging one CSV row
    per iteration and checkpointing for exact resumption."""

    def __init__(self, settings: TrainSettings, encoder, out_dir,
                 init_policy: GaussianPolicy | None = None):
        self.s = settings
        self.encoder = encoder
        self.out_dir = str(out_dir)
        os.makedirs(self.out_dir, exist_ok=True)
        self.episode_cfg = replace(settings.episode, task=settings.task,
                                   reward_mode=settings.reward_mode)
        self.env = PickEnv(self.episode_cfg, encoder=encoder)
        obs_dim = self.env.obs_dim
        act_dim = 3 if settings.task == "simplified" else 5
        if init_policy is not None:
            if (init_policy.obs_dim, init_policy.act_dim) != (obs_dim, act_dim):
                raise ValueError("warm-start policy dimensions do not match the task")
            self.policy = init_policy
        else:
            self.policy = GaussianPolicy(
                obs_dim, act_dim, hidden=settings.hidden,
                init_log_std=settings.init_log_std,
                rng=streams.generator(settings.seed, "init", 0))
        self.value = ValueBaseline(obs_dim, rng=streams.generator(settings.seed, "init", 1))
        self.curriculum = CurriculumState(settings.resolved_curriculum())
        self.policy_rng = streams.generator(settings.seed, "policy")
        self.value_rng = streams.generator(settings.seed, "value")
        self.iteration = 0
        self.env_steps = 0
        self.episode_counter = 0
        self.best_rate = -1.0
        self.report_successes = collections.deque(maxlen=settings.report_window)
        self.log_rows: list[dict] = []
        self._log_path = os.path.join(self.out_dir, "training_log.csv")
        self._trace_path = os.path.join(self.out_dir, "curriculum_trace.csv")
        if not os.path.exists(self._log_path):
            with open(self._log_path, "w", newline="") as f:
                csv.writer(f).writerow(LOG_COLUMNS)
        if not os.path.exists(self._trace_path):
            with open(self._trace_path, "w", newline="") as f:
                csv.writer(f).writerow(TRACE_COLUMNS)

    # -- state persistence ---------------------------------------------------

    def _save_state(self, best: bool = False):
        tag = "best" if best else "last"
        self.policy.save(os.path.join(self.out_dir, f"policy_{tag}.ckpt"),
                         {"task": self.s.task, "iteration": self.iteration,
                          "env_steps": self.env_steps})
        if best:
            return
        self.value.save(os.path.join(self.out_dir, "value_last.ckpt"))
        state = {
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "episode_counter": self.episode_counter,
            "best_rate": self.best_rate,
            "curriculum": self.curriculum.snapshot(),
            "policy_rng": self.policy_rng.bit_generator.state,
            "value_rng": self.value_rng.bit_generator.state,
            "report_successes": [bool(b) for b in self.report_successes],
        }
        with open(os.path.join(self.out_dir, "trainer_state.json"), "w") as f:
            json.dump(state, f)

    def resume(self):
        path = os.path.join(self.out_dir, "trainer_state.json")
        with open(path) as f:
            state = json.load(f)
        arrays, _ = load_checkpoint(os.path.join(self.out_dir, "policy_last.ckpt"))
        self.policy.store.load_state_arrays(arrays)
        self.value = ValueBaseline.load(os.path.join(self.out_dir, "value_last.ckpt"))
        self.iteration = state["iteration"]
        self.env_steps = state["env_steps"]
        self.episode_counter = state["episode_counter"]
        self.best_rate = state["best_rate"]
        self.curriculum.load_snapshot(state["curriculum"])
        self.policy_rng.bit_generator.state = state["policy_rng"]
        self.value_rng.bit_generator.state = state["value_rng"]
        self.report_successes.clear()
        self.report_successes.extend(state["report_successes"])

    # -- loop ------------------------------------------------------------------

    def _episode_seed(self, counter: int) -> int:
        return streams.derive_int(self.s.seed, "scene", counter)

    def _trace_cb(self, episode, lam, rate, success, advanced):
        self.report_successes.append(success)
        with open(self._trace_path, "a", newline="") as f:
            csv.writer(f).writerow([episode, repr(float(lam)), repr(float(rate))])

    def _collect(self) -> RolloutBatch:
        cfg = self.s.trpo
        if cfg.workers > 1:
            batch = collect_parallel(self.policy, self.episode_cfg, self.encoder,
                                     cfg.batch_size, cfg.workers,
                                     self.curriculum.params(), self.s.seed,
                                     self.iteration)
            for success in batch.episode_successes:
                advanced, lam = self.curriculum.record_and_maybe_advance(success)
                self._trace_cb(self.episode_counter, lam,
                               self.curriculum.last_rate, success, advanced)
                self.episode_counter += 1
            return batch
        batch, self.episode_counter = collect_serial(
            self.env, self.policy, cfg.batch_size, self.curriculum,
            self.policy_rng, self._episode_seed, self.episode_counter,
            self._trace_cb)
        return batch

    def train_iteration(self) -> dict:
        cfg = self.s.trpo
        batch = self._collect()
        self.env_steps += batch.size
        values = self.value.predict(batch.observations)
        adv, targets = gae_advantages(batch.rewards, batch.terminals, values,
                                      cfg.gamma, cfg.gae_lambda)
        report = natural_step(self.policy, batch.observations, batch.actions,
                              batch.log_probs, normalize_advantages(adv), cfg)
        self.value.fit(batch.observations, targets, self.value_rng,
                       cfg.value_epochs, cfg.value_lr, cfg.value_batch)
        self.iteration += 1
        rate = (sum(self.report_successes) / len(self.report_successes)
                if self.report_successes else 0.0)
        row = {
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "success_rate_window": rate,
            "lambda": self.curriculum.lam,
            "mean_kl": report.kl_after,
            "surrogate_improvement": report.surrogate_improvement,
            "mean_return": float(np.mean(batch.episode_returns)),
        }
        self.log_rows.append(row)
        with open(self._log_path, "a", newline="") as f:
            csv.writer(f).writerow([row["iteration"], row["env_steps"],
                                    repr(row["success_rate_window"]),
                                    repr(row["lambda"]), repr(row["mean_kl"]),
                                    repr(row["surrogate_improvement"]),
                                    repr(row["mean_return"])])
        if rate > self.best_rate:
            self.best_rate = rate
            self._save_state(best=True)
        if self.iteration % self.s.checkpoint_every == 0:
            self._save_state()
        if self.s.verbose:
            print(f"iter {self.iteration:4d} steps {self.env_steps:8d} "
                  f"rate {rate:.3f} lam {self.curriculum.lam:.3f} "
                  f"kl {report.kl_after:.2e} accepted {report.accepted}")
        return row

    def should_stop(self) -> bool:
        if self.env_steps >= self.s.max_env_steps:
            return True
        if (self.s.stop_at_stage is not None
                and self.curriculum.step_index >= self.s.stop_at_stage):
            return True
        return False

    def train(self) -> list[dict]:
        while not self.should_stop():
            self.train_iteration()
        self._save_state()
        if self.best_rate < 0:
            self._save_state(best=True)
        return self.log_rows
