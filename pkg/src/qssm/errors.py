class ContractViolation(RuntimeError):
    """A caller broke a precondition that cannot be expressed as a bad argument
    (stale cache, unnormalized state, mismatched parameters)."""
