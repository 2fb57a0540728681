"""SMILES parsing and chemical perception."""
from .graph import (
    ATOM_CLASSES,
    BOND_TYPES,
    Atom,
    Bond,
    BondType,
    MolecularGraph,
    PerceptionResult,
)
from .perception import (
    assign_chirality_rs,
    compute_partial_charges,
    from_smiles,
    perceive,
    perceive_aromaticity,
    perceive_hbond,
    perceive_hybridization,
)
from .rings import graph_distances, perceive_rings, sssr
from .smiles import KekulizationError, SmilesError, parse_smiles, random_smiles, write_smiles

__all__ = [
    "ATOM_CLASSES", "BOND_TYPES", "Atom", "Bond", "BondType", "MolecularGraph",
    "PerceptionResult", "KekulizationError", "SmilesError", "assign_chirality_rs",
    "compute_partial_charges", "from_smiles", "graph_distances", "parse_smiles",
    "perceive", "perceive_aromaticity", "perceive_hbond", "perceive_hybridization",
    "perceive_rings", "random_smiles", "sssr", "write_smiles",
]
