from .evolve import (
    GpConfig,
    HoistMutation,
    MixedMutation,
    Mutation,
    PointMutation,
    RegressionTask,
    SubtreeMutation,
    gp_evolve,
)
from .operators import (
    MAX_SIZE,
    generate_nodes,
    generate_tree,
    hoist_mutation,
    instantiate_constant,
    mixed_mutation,
    point_mutation_gp,
    ramped_half_and_half,
    subtree_crossover,
    subtree_mutation,
)
from .primitives import ADD, COS, DIV, MUL, SIN, SUB, Function, PrimitiveSet, default_pset, protected_div
from .tree import (
    Const,
    GpTree,
    InvalidTreeError,
    Mask,
    ParseError,
    TokenTable,
    Var,
    arity_of,
    detokenize,
    eval_tree,
    is_valid,
    parse,
    parse_nodes,
    rmse,
    serialize,
    tokenize,
    validate_nodes,
)

__all__ = [
    "ADD", "COS", "Const", "DIV", "Function", "GpConfig", "GpTree", "HoistMutation",
    "InvalidTreeError", "MAX_SIZE", "MUL", "Mask", "MixedMutation", "Mutation", "ParseError",
    "PointMutation", "PrimitiveSet", "RegressionTask", "SIN", "SUB", "SubtreeMutation",
    "TokenTable", "Var", "arity_of", "default_pset", "detokenize", "eval_tree",
    "generate_nodes", "generate_tree", "gp_evolve", "hoist_mutation", "instantiate_constant",
    "is_valid", "mixed_mutation", "parse", "parse_nodes", "point_mutation_gp",
    "protected_div", "ramped_half_and_half", "rmse", "serialize", "subtree_crossover",
    "subtree_mutation", "tokenize", "validate_nodes",
]
