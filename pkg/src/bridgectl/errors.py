"""Exception types shared across the solver modules."""


class ConfigurationError(ValueError):
    """Invalid model, scenario, or run configuration."""


class SimulationBlowup(RuntimeError):
    """A forward path left the finite range; carries the first offending index."""

    def __init__(self, step, path, mode, message=None):
        self.step = step
        self.path = path
        self.mode = mode
        super().__init__(
            message
            or f"non-finite state at step={step}, path={path}, mode={mode}"
        )

    def payload(self):
        return {"step": int(self.step), "path": int(self.path), "mode": int(self.mode)}


class RiccatiSolveError(RuntimeError):
    """Backward Riccati sweep failed; carries the offending grid node."""

    def __init__(self, node, message):
        self.node = node
        super().__init__(f"{message} (node {node})")


class PicardDivergence(RuntimeError):
    """A fixed-point sweep kept growing; carries the window length in use."""

    def __init__(self, delta, message):
        self.delta = delta
        super().__init__(f"{message} (window length {delta:g})")


class BridgeFailure(RuntimeError):
    """Continuation could not advance; carries the stage diagnostics."""

    def __init__(self, theta, diagnostics, message):
        self.theta = theta
        self.diagnostics = diagnostics
        super().__init__(f"{message} (theta={theta:g})")
