"""Classical authentication with a key distribution center around the three-stage protocol."""

from .cipher import (
    Cipher,
    EncryptedBlock,
    IntegrityError,
    SymmetricKey,
    ToyCipher,
    decrypt,
    encrypt,
    mix64,
    splitmix64,
)
from .encoding import bits_to_bytes, bytes_to_bits, format_bits, parse_bits, q_decode, q_decode_detailed, q_encode
from .exchange import (
    AuthReport,
    AuthScenario,
    EveAgent,
    message_content,
    message_from_content,
    run_authenticated_exchange,
    run_authenticated_mitm,
    setup_parties,
)
from .protocol import (
    ClockPolicy,
    KdcContext,
    MissingContext,
    NonceCache,
    PartyClock,
    Principal,
    Reason,
    Rejected,
    Verdict,
    WorldClock,
    build_message,
    kdc_issue_session,
    verify_message,
)
from .wire import AuthMessage, MalformedMessage, Step1, Step2, Step3, Step4, deserialize, pack, serialize, unpack
