from celery import shared_task
import logging

logger = logging.getLogger(__name__)


@shared_task
def run_fold(config_data, protocol_data):
    """
    Train and evaluate one protocol fold

    Args:
        config_data (dict): RunConfig.to_dict() of the run
        protocol_data (dict): serialized CrossDatabase or IntraDatabase

    Returns:
        dict: fold outcome; on failure {'success': False, 'fold': name, 'error': message}
    """
    from .config import RunConfig
    from .services import ProtocolService, protocol_from_dict

    fold = protocol_data.get('train_db') or protocol_data.get('database', '?')
    try:
        protocol = protocol_from_dict(protocol_data)
        fold = protocol.name
        return ProtocolService(RunConfig.from_dict(config_data)).run_fold(protocol)
    except Exception as e:
        logger.error(f"Error running fold {fold}: {type(e).__name__}: {str(e)}")
        return {
            'success': False,
            'fold': fold,
            'error': f"{type(e).__name__}: {e}",
        }
