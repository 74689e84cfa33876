from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

from ..core.numerics import Matrix, to_matrix
from ..errors import DomainError, ShapeError
from .update_config import UpdateConfig


@dataclass(frozen=True, eq=False)
class ContextSet:
    """Main context plus editorial contexts with composition weights.

    ``updates[s]`` optionally overrides the layer's UpdateConfig for concept s;
    ``warmups[s]`` is the step index after which concept s joins the composition.
    """

    contexts: Tuple[Matrix, ...]
    alphas: Tuple[float, ...]
    labels: Tuple[str, ...]
    updates: Tuple[Optional[UpdateConfig], ...] = ()
    warmups: Tuple[Optional[int], ...] = ()

    def __post_init__(self):
        m = len(self.contexts)
        if m < 1:
            raise DomainError("a context set needs at least one context")
        if len(self.alphas) != m or len(self.labels) != m:
            raise ShapeError(f"{m} contexts but {len(self.alphas)} alphas and {len(self.labels)} labels")
        contexts = tuple(to_matrix(c, f"context '{label}'") for c, label in zip(self.contexts, self.labels))
        if len({c.shape[1] for c in contexts}) != 1:
            raise ShapeError("all contexts must share the embedding width d_c")
        object.__setattr__(self, "contexts", contexts)
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "updates", tuple(self.updates) or (None,) * m)
        object.__setattr__(self, "warmups", tuple(self.warmups) or (None,) * m)
        if len(self.updates) != m or len(self.warmups) != m:
            raise ShapeError("per-concept updates and warmups must match the number of contexts")

    @classmethod
    def single(cls, context: Matrix, label: str = "main") -> "ContextSet":
        return cls(contexts=(context,), alphas=(1.0,), labels=(label,))

    @classmethod
    def compose(
        cls,
        contexts: Sequence[Matrix],
        alphas: Sequence[float],
        labels: Sequence[str],
        updates: Sequence[Optional[UpdateConfig]] = (),
        warmups: Sequence[Optional[int]] = (),
    ) -> "ContextSet":
        return cls(tuple(contexts), tuple(alphas), tuple(labels), tuple(updates), tuple(warmups))

    def __len__(self) -> int:
        return len(self.contexts)

    @property
    def d_c(self) -> int:
        return self.contexts[0].shape[1]

    def is_active(self, s: int, t: int) -> bool:
        """Concept s takes part at step index t once its warm-up has elapsed; the main context always does."""
        return s == 0 or self.warmups[s] is None or t > self.warmups[s]

    def members(self, t: int) -> List[int]:
        return [s for s in range(len(self)) if self.is_active(s, t)]

    def config_for(self, s: int, default: UpdateConfig) -> UpdateConfig:
        return self.updates[s] if self.updates[s] is not None else default

    def with_contexts(self, contexts: Sequence[Matrix]) -> "ContextSet":
        return replace(self, contexts=tuple(contexts))

    def __repr__(self):
        return f"<ContextSet(labels={list(self.labels)}, alphas={list(self.alphas)})>"
