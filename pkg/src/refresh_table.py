from bisect import insort
from collections import deque
from src.shared_enum_vars import RefreshKinds
from src.schema import RefreshRequest


class RefreshTableFullError(Exception):
    pass


def scan_key(request: RefreshRequest) -> tuple[int, int, int]:
    # earliest deadline first, preventive before periodic on ties, then generation order
    return request.deadline, 0 if request.kind is RefreshKinds.PREVENTIVE else 1, request.request_id


class RefreshTable:
    """
    Pending refreshes of one channel. Entries are kept per bank in scan order, capacity is enforced per rank.
    """
    def __init__(self, banks_per_rank: int, ranks: int, capacity_per_rank: int):
        self.banks_per_rank = banks_per_rank
        self.capacity = capacity_per_rank

        # one sorted list per bank
        self.waiting_requests: list[list[RefreshRequest]] = [[] for _ in range(banks_per_rank * ranks)]
        self.occupancy = [0] * ranks
        self.peak_occupancy = [0] * ranks

    def __len__(self):
        return sum(self.occupancy)

    def rank_of(self, bank: int) -> int:
        return bank // self.banks_per_rank

    def is_full(self, rank: int) -> bool:
        return self.occupancy[rank] >= self.capacity

    def append_request(self, request: RefreshRequest) -> None:
        if request.kind is RefreshKinds.INVALID:
            raise ValueError("invalid entries cannot be stored.")

        rank = self.rank_of(request.bank)
        if self.is_full(rank):
            raise RefreshTableFullError(f"refresh table of rank {rank} already holds {self.capacity} entries.")

        insort(self.waiting_requests[request.bank], request, key=scan_key)
        self.occupancy[rank] += 1
        self.peak_occupancy[rank] = max(self.peak_occupancy[rank], self.occupancy[rank])

    def remove_request(self, request: RefreshRequest) -> None:
        entries = self.waiting_requests[request.bank]
        for i, entry in enumerate(entries):
            if entry is request:
                del entries[i]
                self.occupancy[self.rank_of(request.bank)] -= 1
                return
        raise KeyError(f"refresh request {request.request_id} is not in the table.")

    def get_requests(self, bank: int) -> list[RefreshRequest]:
        """Entries of one bank in scan order (a copy)."""
        return list(self.waiting_requests[bank])

    def earliest(self, bank: int) -> RefreshRequest | None:
        entries = self.waiting_requests[bank]
        return entries[0] if entries else None

    def all_requests(self) -> list[RefreshRequest]:
        return sorted((r for entries in self.waiting_requests for r in entries), key=scan_key)


class RefPtrTable:
    """
    Per (bank, subarray): next row to refresh inside the subarray and the number of rows refreshed there in the
    bank's current refresh window.
    """
    def __init__(self, banks: int, subarrays: int, rows_per_subarray: int):
        self.subarrays = subarrays
        self.rows_per_subarray = rows_per_subarray
        self.next_row = [[0] * subarrays for _ in range(banks)]
        self.counts = [[0] * subarrays for _ in range(banks)]

    def is_complete(self, bank: int, subarray: int) -> bool:
        return self.counts[bank][subarray] >= self.rows_per_subarray

    def select(self, bank: int, candidates: list[int] | None = None) -> int | None:
        """
        Least-refreshed subarray among candidates (all subarrays when None) that still has rows left in this window;
        ties go to the lowest index.
        """
        counts = self.counts[bank]
        pool = range(self.subarrays) if candidates is None else candidates
        best = None
        for subarray in pool:
            if counts[subarray] >= self.rows_per_subarray:
                continue
            if best is None or counts[subarray] < counts[best] or (counts[subarray] == counts[best] and subarray < best):
                best = subarray
        return best

    def peek_row(self, bank: int, subarray: int) -> int:
        return subarray * self.rows_per_subarray + self.next_row[bank][subarray]

    def advance(self, bank: int, subarray: int) -> int:
        """Consume the subarray's next row and return its index inside the bank."""
        row = self.peek_row(bank, subarray)
        self.next_row[bank][subarray] = (self.next_row[bank][subarray] + 1) % self.rows_per_subarray
        self.counts[bank][subarray] += 1
        return row

    def reset_window(self, bank: int) -> None:
        self.counts[bank] = [0] * self.subarrays

    def window_total(self, bank: int) -> int:
        return sum(self.counts[bank])


class PRFIFO:
    """Per-bank queues of preventive refresh requests."""
    def __init__(self, banks: int, capacity: int):
        self.capacity = capacity
        self.queues: list[deque[RefreshRequest]] = [deque() for _ in range(banks)]

    def is_full(self, bank: int) -> bool:
        return len(self.queues[bank]) >= self.capacity

    def push(self, request: RefreshRequest) -> None:
        if request.kind is not RefreshKinds.PREVENTIVE:
            raise ValueError("only preventive refreshes are queued.")
        if self.is_full(request.bank):
            raise RefreshTableFullError(f"PR-FIFO of bank {request.bank} is full.")
        self.queues[request.bank].append(request)

    def head(self, bank: int) -> RefreshRequest | None:
        queue = self.queues[bank]
        return queue[0] if queue else None

    def pop(self, bank: int) -> RefreshRequest:
        return self.queues[bank].popleft()

    def __len__(self):
        return sum(len(q) for q in self.queues)
