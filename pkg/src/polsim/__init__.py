"""Proof-of-learning blockchain protocol library and stage-synchronous simulator.

Subpackages:

* ``hashing``    - SHA-256 digests, thresholds, seed derivation, seeded shuffles
* ``training``   - deterministic mini SGD trainer and the hash-chain surrogate
* ``matmul``     - masked matrix-multiplication useful-work backend
* ``chain``      - blocks, two-phase verification, longest-chain state
* ``roles``      - security deposits, group appointment, task assignment
* ``proofs``     - proof packages, committee verification, flag game, settlement
* ``incentives`` - closed-form payoff and honesty-condition analysis
* ``sim``        - the n-miner stage-synchronous network simulation
* ``cli``        - experiment runner producing CSV artifacts
"""

__version__ = "0.1.0"
