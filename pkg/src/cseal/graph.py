"""Prerequisite DAG over learning items: construction, cycle breaking,
bounded-hop neighborhoods, reachability, and the candidate-selection walk
that keeps recommended items logically connected to the learning target.
"""
from __future__ import annotations

import heapq
from collections import deque
from typing import Iterable, Sequence


class CycleError(ValueError):
    """Raised when an operation requiring a DAG meets a cycle."""


class GraphFormatError(ValueError):
    """Raised on malformed edge-list input."""


class PrereqGraph:
    """Directed graph on items 0..num_items-1; edge (i, j) means i precedes j.

    Construction dedupes edges (first occurrence kept) and rejects
    self-loops and out-of-range endpoints.  Cycles are allowed at this
    stage; run break_cycles() to obtain a DAG.  Instances are immutable
    and safe to share across workers.
    """

    def __init__(self, num_items: int, edges: Iterable[tuple[int, int]]):
        if num_items < 1:
            raise ValueError("num_items must be >= 1")
        self.num_items = int(num_items)
        seen: set[tuple[int, int]] = set()
        kept: list[tuple[int, int]] = []
        for pair in edges:
            try:
                src, dst = (int(pair[0]), int(pair[1]))
            except (TypeError, ValueError, IndexError) as exc:
                raise GraphFormatError(f"malformed edge {pair!r}") from exc
            if not (0 <= src < num_items and 0 <= dst < num_items):
                raise GraphFormatError(f"edge ({src}, {dst}) out of range [0, {num_items})")
            if src == dst:
                raise GraphFormatError(f"self-loop at item {src}")
            if (src, dst) in seen:
                continue
            seen.add((src, dst))
            kept.append((src, dst))
        self.edges: tuple[tuple[int, int], ...] = tuple(kept)
        self.succ: list[list[int]] = [[] for _ in range(num_items)]
        self.pred: list[list[int]] = [[] for _ in range(num_items)]
        for src, dst in kept:
            self.succ[src].append(dst)
            self.pred[dst].append(src)
        for adj in (self.succ, self.pred):
            for lst in adj:
                lst.sort()

    def __repr__(self):
        return f"PrereqGraph(num_items={self.num_items}, edges={len(self.edges)})"


def load_graph(edge_list: Sequence[tuple[int, int]], num_items: int) -> PrereqGraph:
    return PrereqGraph(num_items, edge_list)


def load_graph_file(source) -> PrereqGraph:
    """Parse the edge-list format: one `src,dst` per line, `#` comments,
    optional `items=<M>` header.  Without the header M = max id + 1."""
    if isinstance(source, (str, bytes)):
        with open(source, "r", encoding="utf-8") as f:
            lines = f.readlines()
    else:
        lines = list(source)
    num_items = None
    edges: list[tuple[int, int]] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("items="):
            try:
                num_items = int(line.split("=", 1)[1])
            except ValueError as exc:
                raise GraphFormatError(f"line {lineno}: bad items header {line!r}") from exc
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise GraphFormatError(f"line {lineno}: expected 'src,dst', got {line!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise GraphFormatError(f"line {lineno}: non-integer endpoint in {line!r}") from exc
    if num_items is None:
        if not edges:
            raise GraphFormatError("empty graph file and no items= header")
        num_items = max(max(e) for e in edges) + 1
    return PrereqGraph(num_items, edges)


def save_graph_file(graph: PrereqGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"items={graph.num_items}\n")
        for src, dst in graph.edges:
            f.write(f"{src},{dst}\n")


def break_cycles(graph: PrereqGraph) -> PrereqGraph:
    """Remove back edges found by DFS from ascending item ids.

    Only edges that close a cycle are removed; an acyclic input is returned
    unchanged.  Deterministic: roots and adjacency are visited in ascending
    id order.
    """
    white, gray, black = 0, 1, 2
    color = [white] * graph.num_items
    removed: set[tuple[int, int]] = set()
    for root in range(graph.num_items):
        if color[root] != white:
            continue
        color[root] = gray
        stack = [(root, iter(graph.succ[root]))]
        while stack:
            node, neighbors = stack[-1]
            advanced = False
            for nxt in neighbors:
                if color[nxt] == gray:
                    removed.add((node, nxt))  # closes a cycle through the DFS stack
                elif color[nxt] == white:
                    color[nxt] = gray
                    stack.append((nxt, iter(graph.succ[nxt])))
                    advanced = True
                    break
            if not advanced:
                color[node] = black
                stack.pop()
    if not removed:
        return graph
    return PrereqGraph(graph.num_items, [e for e in graph.edges if e not in removed])


def _within(adj: list[list[int]], node: int, hops: int) -> set[int]:
    if hops <= 0:
        return set()
    found: set[int] = set()
    frontier = [node]
    for _ in range(hops):
        nxt: list[int] = []
        for u in frontier:
            for v in adj[u]:
                if v not in found and v != node:
                    found.add(v)
                    nxt.append(v)
        if not nxt:
            break
        frontier = nxt
    return found


def successors_within(graph: PrereqGraph, node: int, hops: int) -> set[int]:
    """Nodes reachable from `node` by at most `hops` forward edges (node excluded)."""
    _check_node(graph, node)
    return _within(graph.succ, node, hops)


def predecessors_within(graph: PrereqGraph, node: int, hops: int) -> set[int]:
    """Mirror of successors_within on reversed edges."""
    _check_node(graph, node)
    return _within(graph.pred, node, hops)


def can_reach(graph: PrereqGraph, node: int, targets: Iterable[int]) -> bool:
    """True iff a directed path of length >= 0 leads from node to any target."""
    _check_node(graph, node)
    target_set = set(targets)
    if node in target_set:
        return True
    seen = {node}
    queue = deque([node])
    while queue:
        u = queue.popleft()
        for v in graph.succ[u]:
            if v in target_set:
                return True
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return False


def nodes_reaching(graph: PrereqGraph, targets: Iterable[int]) -> set[int]:
    """All nodes with a path (length >= 0) into the target set."""
    found = set(targets)
    queue = deque(found)
    while queue:
        u = queue.popleft()
        for v in graph.pred[u]:
            if v not in found:
                found.add(v)
                queue.append(v)
    return found


def cognitive_navigation(graph: PrereqGraph, focus: int, targets: Iterable[int], k: int = 2) -> set[int]:
    """Candidate items around the current focus.

    Collects the focus, its successors within k-1 hops, and for every
    predecessor q within k-1 hops: q plus q's direct neighbors (successors
    and predecessors).  Everything that cannot reach the target set is then
    dropped.  May return an empty set; callers fall back to
    candidates_with_fallback.
    """
    _check_node(graph, focus)
    if k < 1:
        raise ValueError("k must be >= 1")
    cand = {focus}
    cand |= successors_within(graph, focus, k - 1)
    queue = deque(sorted(predecessors_within(graph, focus, k - 1)))
    while queue:
        q = queue.popleft()
        cand.add(q)
        cand.update(graph.succ[q])
        cand.update(graph.pred[q])
    reachable = nodes_reaching(graph, targets)
    return {c for c in cand if c in reachable}


def fallback_focus(graph: PrereqGraph, targets: Iterable[int]) -> int:
    """Lowest-id node without predecessors that can reach the targets."""
    reachable = nodes_reaching(graph, targets)
    for node in range(graph.num_items):
        if not graph.pred[node] and node in reachable:
            return node
    raise CycleError("no predecessor-free node reaches the targets (graph not a DAG?)")


def candidates_with_fallback(graph: PrereqGraph, focus: int, targets: Iterable[int], k: int = 2) -> set[int]:
    """Cognitive navigation with the empty-result fallback: re-center at the
    lowest-id source that reaches the targets and recompute."""
    cand = cognitive_navigation(graph, focus, targets, k)
    if cand:
        return cand
    return cognitive_navigation(graph, fallback_focus(graph, targets), targets, k)


def topological_order(graph: PrereqGraph) -> list[int]:
    """Kahn's algorithm with ascending-id tie-break; raises CycleError on cycles."""
    indeg = [len(graph.pred[v]) for v in range(graph.num_items)]
    heap = [v for v in range(graph.num_items) if indeg[v] == 0]
    heapq.heapify(heap)
    order: list[int] = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for v in graph.succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(order) != graph.num_items:
        raise CycleError("graph contains a cycle")
    return order


def longest_path_depths(graph: PrereqGraph) -> list[int]:
    """Longest-path depth of each node from the sources (sources have depth 0)."""
    depth = [0] * graph.num_items
    for v in topological_order(graph):
        for u in graph.pred[v]:
            depth[v] = max(depth[v], depth[u] + 1)
    return depth


def ancestors_of(graph: PrereqGraph, targets: Iterable[int]) -> set[int]:
    """Strict ancestors (prerequisites at any distance) of the target set."""
    return nodes_reaching(graph, targets) - set(targets)


def _check_node(graph: PrereqGraph, node: int) -> None:
    if not (0 <= node < graph.num_items):
        raise ValueError(f"item {node} out of range [0, {graph.num_items})")
