"""Unencrypted inverted index used as ground truth for every search."""

from __future__ import annotations

from typing import Dict, List, Optional, Set

from .common import Op, Query


class PlaintextIndex:
    def __init__(self):
        self.postings: Dict[str, Set[int]] = {}
        self.history: List[Query] = []

    def apply(self, query: Query) -> Optional[Set[int]]:
        self.history.append(query)
        if query.is_search:
            return set(self.postings.get(query.keyword, ()))
        ids = self.postings.setdefault(query.keyword, set())
        if query.op == Op.ADD:
            ids.add(query.ind)
        else:
            ids.discard(query.ind)
        return None

    def search(self, keyword: str) -> Set[int]:
        return set(self.postings.get(keyword, ()))
