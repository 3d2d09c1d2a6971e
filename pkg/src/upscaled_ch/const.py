from pathlib import Path

DEFAULT_OUTPUT_DIR = Path("out")

# Default wavy channel; porosity equals the cross-section
DEFAULT_AMPLITUDE = 0.2
DEFAULT_CROSS_SECTION = 0.46
DEFAULT_RESOLUTION = 128
DEFAULT_PE_MIC = 0.04

# Stage directories under --out
CELL_DIR = "cell"
STOKES_DIR = "stokes"
TENSOR_DIR = "tensors"
MACRO_DIR = "macro"

MASK_FILE = "mask.txt"
CORRECTOR_CSV = "xi_{kind}_{k}.csv"
CORRECTOR_VTK = "xi_{kind}_{k}.vtk"
FLOW_CSV = "flow.csv"
FLOW_VTK = "flow.vtk"
TENSOR_REPORT = "tensor_report.csv"
SNAPSHOT_CSV = "snapshot_{index:04d}.csv"
INTERFACE_CSV = "interface_{index:04d}.csv"
DIAGNOSTICS_CSV = "diagnostics.csv"
STEPS_CSV = "steps.csv"
SUMMARY_JSON = "summary.json"
RESOLVED_CONFIG = "config.toml"

FLOAT_FORMAT = ".17g"

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
