"""Manager and Worker decoders, the policy that wires them, and training history."""
