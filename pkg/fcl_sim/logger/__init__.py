from fcl_sim.logger.main import get_logger, set_level
