from .channel import (
    DEFAULT_TIMEOUT,
    Channel,
    ChannelClosed,
    ChannelTap,
    ChannelTimeout,
    JsonlCapture,
    LoopbackChannel,
    TappedFrame,
    TcpChannel,
)
from .eavesdrop import TapAttacker, replay_capture
from .session import (
    SessionAborted,
    SessionError,
    connect,
    hello_for,
    make_server,
    negotiate,
    run_loopback_session,
    run_networked_session,
)
from .wire import (
    MAX_PAYLOAD,
    PROTOCOL_VERSION,
    Abort,
    AbortReason,
    EncodingError,
    FramingError,
    Hello,
    InputVector,
    Message,
    MsgType,
    Output,
    OversizeError,
    ProtocolError,
    SyncConfirm,
    SyncProbe,
    TransportError,
    decode_frame,
    encode_frame,
    message_from_dict,
    message_to_dict,
    split_frame,
)
