import os
import socket
from typing import Optional

import attr

STORE_ENVIRONMENT_VARIABLE = 'KINEVERSE_STORE'


def validate_ip_address(instance, attribute, value):
    try:
        socket.inet_aton(value)
    except OSError:
        raise ValueError(f"Invalid IP address: {value}")


def validate_port_number(instance, attribute, value):
    if not (0 <= value <= 65535):
        raise ValueError(f"Port number must be between 0 and 65535, got {value}")


def default_store() -> Optional[str]:
    return os.environ.get(STORE_ENVIRONMENT_VARIABLE) or None


@attr.define
class ServerParameters:
    """
    Endpoint and persistence settings of the model server. Port 0 binds a free port.
    The store is the kmodel file the history is persisted to after every apply; it is
    replayed on start when it exists.
    """
    ip_address: str = attr.field(default='127.0.0.1', validator=validate_ip_address, converter=str)
    port_number: int = attr.field(default=7310, validator=validate_port_number, converter=int)
    store: Optional[str] = attr.field(factory=default_store)
