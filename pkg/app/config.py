import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Config:
    # Logging configuration
    LOGGING_LEVEL = os.environ.get("HODGEWAVE_LOGGING_LEVEL", "INFO")
    LOGGING_FORMAT = os.environ.get("HODGEWAVE_LOGGING_FORMAT", "console")

    # Quadrature
    ASSEMBLY_QUADRATURE_DEGREE = int(
        os.environ.get("HODGEWAVE_ASSEMBLY_QUADRATURE_DEGREE", 8)
    )
    ERROR_QUADRATURE_DEGREE = int(
        os.environ.get("HODGEWAVE_ERROR_QUADRATURE_DEGREE", 12)
    )
    TIME_QUADRATURE_POINTS = int(os.environ.get("HODGEWAVE_TIME_QUADRATURE_POINTS", 3))

    # Linear algebra
    KERNEL_SHIFT = float(os.environ.get("HODGEWAVE_KERNEL_SHIFT", 1e-10))
    SOLVER_TOLERANCE = float(os.environ.get("HODGEWAVE_SOLVER_TOLERANCE", 1e-13))
    MAX_REFINEMENT_STEPS = int(os.environ.get("HODGEWAVE_MAX_REFINEMENT_STEPS", 3))
    MAX_DENSE_DOFS = int(os.environ.get("HODGEWAVE_MAX_DENSE_DOFS", 2000))

    # Output
    OUTPUT_DIR = "results"
    OUTPUT_DIR_ENV = "HODGEWAVE_OUT_DIR"
