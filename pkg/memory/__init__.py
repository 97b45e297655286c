from memory.bank import MemoryBank, RefreshPolicy, rank_neighbors
from memory.dump import BankDump, dump_bank

__all__ = ["MemoryBank", "RefreshPolicy", "rank_neighbors", "BankDump", "dump_bank"]
