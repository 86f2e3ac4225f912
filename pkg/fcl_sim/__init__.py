__version__ = "0.1.0"

from fcl_sim.exceptions import FCLError
