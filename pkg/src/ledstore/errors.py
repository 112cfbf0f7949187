"""Exception hierarchy for the pool, transaction, and schema layers."""


class PoolError(Exception):
    """Base class for everything raised by this package."""


class IoError(PoolError):
    """Filesystem-level failure (missing file, locked pool, bad path)."""


class AlreadyExists(IoError):
    """create_pool target already holds data."""


class PoolLocked(IoError):
    """A live handle already owns this pool file."""


class CapacityTooSmall(PoolError):
    """Requested pool capacity below the supported minimum."""


class BadMagic(PoolError):
    """File is not a pool (magic bytes or header sanity check failed)."""


class LayoutMismatch(PoolError):
    """Stored layout name/version differs from the one requested."""


class ForeignPool(PoolError):
    """ObjectId carries a different pool identity token."""


class OutOfBounds(PoolError):
    """ObjectId or byte range does not resolve inside the heap."""


class OutOfSpace(PoolError):
    """Allocator or undo log exhausted."""


class DoubleFree(PoolError):
    """Block freed twice."""


class NestedTransaction(PoolError):
    """tx_begin while another transaction is active on the handle."""


class TxStateError(PoolError):
    """Operation on a transaction that is not active."""


class TxRequired(PoolError):
    """Mutation that needs an active transaction was attempted without one."""


class SimulatedCrash(PoolError):
    """Armed crash plan fired; the handle is dead and the file is as-crashed."""


class OverlappingFields(PoolError):
    """Field layouts in one record overlap."""


class NonContiguousLevel(PoolError):
    """Extension appended at a level other than current max + 1."""


class UnknownLevel(PoolError):
    """Extension level not registered on the descriptor."""


class NoSuchField(PoolError):
    """Field path does not name a base or extension field."""


class FingerprintMismatch(PoolError):
    """Base-layout fingerprint of the schema manifest differs from the pool's."""


class MigrationMissing(PoolError):
    """Stored layout version is behind and no migration pass covers the gap."""


class ConfigError(PoolError):
    """Invalid benchmark configuration."""
