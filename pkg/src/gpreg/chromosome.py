from __future__ import annotations

from dataclasses import dataclass, field

from .expr import Node, Program, compile_tree, format_pair, parse_pair


@dataclass(eq=False)
class Chromosome:
    """A candidate transform: ``x' = x_tree(x, y)``, ``y' = y_tree(x, y)``."""

    x_tree: Node
    y_tree: Node
    id: int = -1
    fitness: object = None
    rank: int | None = None
    _programs: tuple[Program, Program] | None = field(default=None, repr=False)

    @property
    def programs(self) -> tuple[Program, Program]:
        if self._programs is None:
            self._programs = (compile_tree(self.x_tree), compile_tree(self.y_tree))
        return self._programs

    def map_points(self, xs, ys, dims):
        """Apply the transform to sensed coordinates; ``dims`` is the sensed (width, height)."""
        px, py = self.programs
        return px(xs, ys, *dims), py(xs, ys, *dims)

    def same_trees(self, other: Chromosome) -> bool:
        return self.x_tree == other.x_tree and self.y_tree == other.y_tree

    def to_text(self) -> str:
        return format_pair(self.x_tree, self.y_tree)

    @classmethod
    def from_text(cls, line: str, id: int = -1) -> Chromosome:
        tx, ty = parse_pair(line)
        return cls(tx, ty, id=id)
