"""Numerical checks of the loss-reduction bounds on quadratics."""
