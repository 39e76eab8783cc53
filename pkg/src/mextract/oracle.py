"""The black-box target oracle: label-only queries with a ledger.

A ``TargetHandle`` fronts either an in-process model or a remote
prediction service. The attack side of the API only ever sees predicted
labels; probabilities are reachable solely through the gated white-box
evaluation channel, which never touches the ledger.

The ledger check-and-increment is a single step under a lock, so
concurrent callers can never over-spend a capped budget.
"""

from __future__ import annotations

import json
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExhaustedError, CapabilityError, TransportError
from .models import Model, forward_batch

DP_MECHANISMS = ("none", "laplace-output")


@dataclass(frozen=True)
class DpConfig:
    """Output-perturbation settings for the oracle's responses.

    ``sensitivity`` defaults to 2, the L1 diameter of the probability
    simplex. Noise scale is sensitivity / epsilon.
    """

    mechanism: str = "none"
    epsilon: float = 1.0
    sensitivity: float = 2.0
    noise_seed: int = 0

    def __post_init__(self):
        if self.mechanism not in DP_MECHANISMS:
            raise ValueError(f"unknown dp mechanism {self.mechanism!r}")
        if self.mechanism != "none":
            if not (np.isfinite(self.epsilon) and self.epsilon > 0.0):
                raise ValueError("epsilon must be finite and positive")
            if self.sensitivity <= 0.0:
                raise ValueError("sensitivity must be positive")

    def to_dict(self) -> dict:
        return {
            "mechanism": self.mechanism,
            "epsilon": self.epsilon,
            "sensitivity": self.sensitivity,
            "noise_seed": self.noise_seed,
        }


def laplace_perturbed_label(probs, dp: DpConfig, draw_index: int) -> int:
    """Argmax after adding iid Laplace(0, sensitivity/epsilon) noise to each
    probability coordinate. No renormalization: argmax only compares.

    Deterministic in (noise_seed, draw_index); one draw_index per answered
    query keeps replays reproducible.
    """
    p = np.asarray(probs, dtype=np.float64)
    rng = np.random.default_rng([int(dp.noise_seed), int(draw_index)])
    noisy = p + rng.laplace(0.0, dp.sensitivity / dp.epsilon, size=p.shape)
    return int(np.argmax(noisy))


class TargetHandle:
    """Query surface over a target model with ledger accounting.

    Build with :meth:`in_process` or :meth:`remote`.
    """

    def __init__(
        self,
        model: Model | None = None,
        url: str | None = None,
        cap: int | None = None,
        dp: DpConfig | None = None,
        eval_channel_enabled: bool = False,
        timeout: float = 10.0,
        retry_base_delay: float = 0.1,
    ):
        if (model is None) == (url is None):
            raise ValueError("exactly one of model / url must be given")
        self.model = model
        self.url = url.rstrip("/") if url else None
        self.cap = cap
        self.dp = dp if dp is not None else DpConfig()
        self.eval_channel_enabled = eval_channel_enabled
        self.timeout = timeout
        self.retry_base_delay = retry_base_delay
        self._ledger = 0
        self._lock = threading.Lock()

    @classmethod
    def in_process(
        cls,
        model: Model,
        cap: int | None = None,
        dp: DpConfig | None = None,
        eval_channel_enabled: bool = False,
    ) -> "TargetHandle":
        return cls(model=model, cap=cap, dp=dp, eval_channel_enabled=eval_channel_enabled)

    @classmethod
    def remote(cls, url: str, cap: int | None = None, **kwargs) -> "TargetHandle":
        return cls(url=url, cap=cap, **kwargs)

    @property
    def is_remote(self) -> bool:
        return self.url is not None

    @property
    def ledger(self) -> int:
        with self._lock:
            return self._ledger

    def _reserve(self, n: int) -> int:
        """Atomically check the cap and advance the ledger; returns the
        draw-index base for this batch."""
        with self._lock:
            if self.cap is not None and self._ledger + n > self.cap:
                raise BudgetExhaustedError(self._ledger, self.cap)
            base = self._ledger
            self._ledger += n
            return base

    def query_labels(self, X) -> np.ndarray:
        """Predicted labels for an (n, d) batch; ledger grows by n."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"batch must be 2-D, got shape {X.shape}")
        n = X.shape[0]
        if self.is_remote:
            labels = self._remote_predict(X)
            with self._lock:
                self._ledger += n
            return labels
        base = self._reserve(n)
        probs = forward_batch(self.model, X)
        if self.dp.mechanism == "laplace-output":
            return np.asarray(
                [laplace_perturbed_label(probs[i], self.dp, base + i) for i in range(n)],
                dtype=np.int64,
            )
        return np.argmax(probs, axis=1).astype(np.int64)

    def white_box_probs(self, X) -> np.ndarray:
        """Raw prediction distributions via the evaluation channel.

        Never counted against the ledger. Requires the channel flag and an
        in-process backend; remote targets expose probabilities through
        their own probs endpoint instead.
        """
        if not self.eval_channel_enabled:
            raise CapabilityError("white-box evaluation channel is disabled")
        if self.is_remote:
            raise CapabilityError("white-box channel is in-process only")
        return forward_batch(self.model, np.asarray(X, dtype=np.float64))

    # -- remote transport ------------------------------------------------

    def _post_json(self, path: str, payload: dict) -> dict:
        """POST with up to 3 attempts and exponential backoff on transport
        failures and 5xx responses. 4xx responses are not retried."""
        body = json.dumps(payload).encode("utf-8")
        attempts = 0
        last_status = None
        for attempt in range(3):
            attempts = attempt + 1
            req = urllib.request.Request(
                self.url + path, data=body, headers={"Content-Type": "application/json"}
            )
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except urllib.error.HTTPError as e:
                last_status = e.code
                err_body = {}
                try:
                    err_body = json.loads(e.read().decode("utf-8"))
                except Exception:
                    pass
                if e.code == 429 or err_body.get("error") == "budget_exhausted":
                    used = int(err_body.get("used", -1))
                    raise BudgetExhaustedError(used, used)
                if e.code == 403:
                    raise CapabilityError(
                        err_body.get("error", "forbidden")
                        + " (server must run with --expose-probs)"
                    )
                if 400 <= e.code < 500:
                    raise TransportError(
                        f"server rejected request: {err_body.get('error', e.reason)}",
                        attempts,
                        e.code,
                    )
            except (urllib.error.URLError, OSError, TimeoutError):
                pass
            if attempt < 2:
                time.sleep(self.retry_base_delay * (2**attempt))
        raise TransportError(
            f"remote target unreachable after {attempts} attempts", attempts, last_status
        )

    def _remote_predict(self, X: np.ndarray) -> np.ndarray:
        reply = self._post_json("/v1/predict", {"instances": X.tolist()})
        return np.asarray(reply["labels"], dtype=np.int64)

    def remote_probs(self, X, page_size: int = 256) -> np.ndarray:
        """Fetch raw probability vectors from a remote probs endpoint.

        Paginates at ``page_size`` rows per request to respect the
        service's batch limit; probs requests are never ledger-counted.
        """
        if not self.is_remote:
            raise CapabilityError("remote_probs needs a remote backend")
        X = np.asarray(X, dtype=np.float64)
        pages = []
        for start in range(0, X.shape[0], page_size):
            reply = self._post_json(
                "/v1/probs", {"instances": X[start : start + page_size].tolist()}
            )
            pages.append(np.asarray(reply["probs"], dtype=np.float64))
        return np.vstack(pages)

    def stats(self) -> dict:
        """GET the remote service counters."""
        if not self.is_remote:
            raise CapabilityError("stats needs a remote backend")
        attempts = 0
        for attempt in range(3):
            attempts = attempt + 1
            try:
                with urllib.request.urlopen(self.url + "/v1/stats", timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except (urllib.error.URLError, OSError, TimeoutError):
                if attempt < 2:
                    time.sleep(self.retry_base_delay * (2**attempt))
        raise TransportError(f"stats unreachable after {attempts} attempts", attempts)
