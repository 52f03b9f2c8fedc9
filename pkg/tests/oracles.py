"""Brute-force reference implementations for the consensus rules.

These work from plain event records (creator, parents, created_at) using
naive set/transitive-closure computations, independent of the package's
incremental bitmask machinery.
"""

from __future__ import annotations


def sm(n: int) -> int:
    return (2 * n) // 3 + 1


class BruteGraph:
    def __init__(self, population, events):
        """events: iterable with .digest/.creator/.self_parent/.other_parent/
        .payload/.created_at, in topological order."""
        self.population = sorted(population)
        self.events = list(events)
        self.by_id = {e.digest: e for e in self.events}
        self.anc: dict[str, set[str]] = {}
        for e in self.events:
            s = {e.digest}
            for p in (e.self_parent, e.other_parent):
                if p is not None:
                    s |= self.anc[p]
            self.anc[e.digest] = s
        self._rounds = None
        self._fame = None

    # reachability ---------------------------------------------------------

    def is_ancestor(self, a: str, b: str) -> bool:
        return b in self.anc[a]

    def strongly_sees(self, a: str, b: str) -> bool:
        creators = set()
        for mid in self.events:
            if self.is_ancestor(a, mid.digest) and self.is_ancestor(
                mid.digest, b
            ):
                creators.add(mid.creator)
        return len(creators) >= sm(len(self.population))

    # rounds ---------------------------------------------------------------

    def rounds(self):
        if self._rounds is not None:
            return self._rounds
        rounds: dict[str, int] = {}
        witness: dict[str, bool] = {}
        witnesses_by_round: dict[int, list[str]] = {}
        for e in self.events:
            parents = [p for p in (e.self_parent, e.other_parent) if p]
            if not parents:
                r = 1
            else:
                r = max(rounds[p] for p in parents)
                seen = [
                    w
                    for w in witnesses_by_round.get(r, [])
                    if self.strongly_sees(e.digest, w)
                ]
                if len(seen) >= sm(len(self.population)):
                    r += 1
            rounds[e.digest] = r
            w = e.self_parent is None or rounds[e.self_parent] < r
            witness[e.digest] = w
            if w:
                witnesses_by_round.setdefault(r, []).append(e.digest)
        self._rounds = (rounds, witness, witnesses_by_round)
        return self._rounds

    # fame -----------------------------------------------------------------

    def fame(self, coin_period=10):
        if self._fame is not None:
            return self._fame
        rounds, _, wbr = self.rounds()
        max_round = max(rounds.values(), default=0)
        votes: dict[tuple[str, str], bool] = {}
        decided: dict[str, bool] = {}

        def digest_sorted(ids):
            return sorted(ids)

        def vote(v: str, w: str) -> bool:
            if (v, w) in votes:
                return votes[(v, w)]
            diff = rounds[v] - rounds[w]
            if diff == 1:
                result = self.is_ancestor(v, w)
            else:
                prev = [
                    u
                    for u in wbr.get(rounds[v] - 1, [])
                    if self.strongly_sees(v, u)
                ]
                yes = sum(1 for u in prev if vote(u, w))
                no = len(prev) - yes
                result = yes >= no
                tally = max(yes, no)
                if diff % coin_period == 0:
                    if tally < sm(len(self.population)):
                        result = bool(int(v[-1], 16) & 1)
                elif tally >= sm(len(self.population)) and w not in decided:
                    decided[w] = result
            votes[(v, w)] = result
            return result

        for r in range(1, max_round + 1):
            for w in digest_sorted(wbr.get(r, [])):
                if w in decided:
                    continue
                for d in range(r + 1, max_round + 1):
                    for v in digest_sorted(wbr.get(d, [])):
                        vote(v, w)
                        if w in decided:
                            break
                    if w in decided:
                        break
        self._fame = decided
        return decided

    # total order ----------------------------------------------------------

    def order(self):
        rounds, _, wbr = self.rounds()
        fame = self.fame()
        out = []
        received: set[str] = set()
        r = 0
        while True:
            r += 1
            ws = wbr.get(r)
            if not ws or any(w not in fame for w in ws):
                break
            famous = [w for w in ws if fame[w]]
            if not famous:
                continue
            batch = []
            for e in self.events:
                if e.digest in received:
                    continue
                if all(self.is_ancestor(w, e.digest) for w in famous):
                    stamps = []
                    for w in famous:
                        cands = [
                            y
                            for y in self.events
                            if y.creator == self.by_id[w].creator
                            and self.is_ancestor(w, y.digest)
                            and self.is_ancestor(y.digest, e.digest)
                        ]
                        y = min(
                            cands, key=lambda y: len(self.anc[y.digest])
                        )
                        stamps.append(y.created_at)
                    stamps.sort()
                    ts = stamps[(len(stamps) - 1) // 2]
                    batch.append((ts, e.digest, r))
                    received.add(e.digest)
            batch.sort()
            out.extend((d, rr, ts) for ts, d, rr in batch)
        return out

    def forks(self):
        out = set()
        for a in self.events:
            for b in self.events:
                if a.digest >= b.digest or a.creator != b.creator:
                    continue
                if not self.is_ancestor(
                    a.digest, b.digest
                ) and not self.is_ancestor(b.digest, a.digest):
                    out.add((a.creator,) + tuple(sorted((a.digest, b.digest))))
        return out
