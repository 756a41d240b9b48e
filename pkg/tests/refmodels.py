"""Brute-force reference models, written independently of the package's
cache implementation so they can serve as oracles."""

from collections import OrderedDict


class RefSetAssocCache:
    """N-way set-associative cache, LRU replacement, MRU insertion.

    Each set is an OrderedDict tag -> dirty, most-recent last.
    """

    def __init__(self, num_sets: int, ways: int):
        self.num_sets = num_sets
        self.ways = ways
        self.sets = [OrderedDict() for _ in range(num_sets)]

    def access(self, page: int, is_write: bool):
        """Returns (hit, evicted_page or None, evicted_dirty)."""
        s = page % self.num_sets
        tag = page // self.num_sets
        od = self.sets[s]
        if tag in od:
            od.move_to_end(tag)
            if is_write:
                od[tag] = True
            return True, None, False
        evicted = None
        ev_dirty = False
        if len(od) >= self.ways:
            old_tag, ev_dirty = od.popitem(last=False)
            evicted = old_tag * self.num_sets + s
        od[tag] = is_write
        return False, evicted, ev_dirty

    def resident(self, page: int) -> bool:
        return (page // self.num_sets) in self.sets[page % self.num_sets]


class RefFullyAssocLRU:
    """Fully-associative LRU cache of `capacity` pages."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.od = OrderedDict()

    def access(self, page: int) -> bool:
        if page in self.od:
            self.od.move_to_end(page)
            return True
        if len(self.od) >= self.capacity:
            self.od.popitem(last=False)
        self.od[page] = True
        return False
