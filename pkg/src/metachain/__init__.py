"""metachain: a deterministic, desk-scale adaptive modular blockchain.

Subsystems:

- ledger      blocks, chain/DAG views, fork choice, ledger conversion
- consensus   PoW / PoA / TDPoS engines and hot-plug replacement
- contracts   gas-metered native contracts (LedgerConversion, NFR, OTMC, Channel)
- proofs      storage and compute-availability validity proofs for NFR tokens
- channels    off-chain payment channels with dispute windows
- trust       weighted-hypergraph local trust models
- netsim      seeded discrete-event network simulator with fault injection
- adaptive    dataset building, tree/boosted-stump learners, switch controller
- cli         scenario runner (`metachain` command)
"""

from metachain._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
