from .bundled import BPP, GENERATED, GRAPHS, bundled_bpp, bundled_graph, generated_dataset
from .combinatorial import (
    BinPackingProblem,
    BppInstance,
    ColoringProblem,
    GraphInstance,
    InstanceFormatError,
    bin_fills,
    bpp_fitness,
    coloring_conflicts,
    coloring_fitness,
    parse_bpp,
    parse_dimacs,
    random_graph,
    to_dimacs,
)
from .regression import (
    FORMULAS,
    DatasetFormatError,
    RegressionDataset,
    f2,
    friedman1,
    friedman2,
    friedman3,
    gen_f2,
    gen_friedman,
    gen_nonanalytic,
    load_csv,
    non_analytic,
    save_csv,
    train_test_split,
)

__all__ = [
    "BPP", "BinPackingProblem", "BppInstance", "ColoringProblem", "DatasetFormatError",
    "FORMULAS", "GENERATED", "GRAPHS", "GraphInstance", "InstanceFormatError",
    "RegressionDataset", "bin_fills", "bpp_fitness", "bundled_bpp", "bundled_graph",
    "coloring_conflicts", "coloring_fitness", "f2", "friedman1", "friedman2", "friedman3",
    "gen_f2", "gen_friedman", "gen_nonanalytic", "generated_dataset", "load_csv",
    "non_analytic", "parse_bpp", "parse_dimacs", "random_graph", "save_csv", "to_dimacs",
    "train_test_split",
]
