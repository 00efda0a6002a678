import math

import numpy as np
import pytest

from fracopt import (
    DimensionError,
    MultiOrder,
    SampledPath,
    Side,
    TimeGrid,
    caputo_derivative,
    frac_integral,
    gamma_fn,
    integration_by_parts_residual,
    rl_derivative,
)


def reflect(p: SampledPath) -> SampledPath:
    return SampledPath(p.grid, p.values[:, ::-1].copy(), p.flags[::-1].copy())


def singular_right_path(grid: TimeGrid, fn) -> SampledPath:
    """Sample a function singular at b; the terminal node is a flagged filler."""
    t = grid.nodes()
    vals = np.empty_like(t)
    vals[:-1] = fn(t[:-1])
    vals[-1] = vals[-2]
    flags = np.zeros_like(t, dtype=bool)
    flags[-1] = True
    return SampledPath(grid, vals[None, :], flags)


class TestFracIntegral:
    def test_integral_of_one(self):
        grid = TimeGrid(0.0, 1.0, 256)
        path = SampledPath.from_function(grid, np.ones_like)
        out = frac_integral(path, MultiOrder((0.5,)), Side.LEFT)
        exact = grid.nodes() ** 0.5 / gamma_fn(1.5)
        assert out.values[0, 0] == 0.0
        assert np.max(np.abs(out.values[0] - exact)) < 1e-3

    def test_right_integral_of_singular_power(self):
        # I^(1/3) from the right of (5-s)^(-1/2)/Gamma(1/2) is
        # (5-t)^(-1/6)/Gamma(5/6) by the power rule
        grid = TimeGrid(1.0, 5.0, 1024)
        path = singular_right_path(grid, lambda s: (5.0 - s) ** -0.5 / gamma_fn(0.5))
        out = frac_integral(path, MultiOrder((1.0 / 3.0,)), Side.RIGHT)
        t = grid.nodes()
        sel = t <= 4.9
        exact = (5.0 - t[sel]) ** (-1.0 / 6.0) / gamma_fn(5.0 / 6.0)
        assert np.max(np.abs(out.values[0][sel] - exact)) < 1e-2

    def test_reflection_duality_is_exact(self):
        grid = TimeGrid(0.0, 2.0, 64)
        rng = np.random.default_rng(7)
        path = SampledPath(grid, rng.normal(size=(2, grid.n_nodes)))
        orders = MultiOrder((0.3, 0.8))
        direct = frac_integral(path, orders, Side.RIGHT)
        reflected = reflect(frac_integral(reflect(path), orders, Side.LEFT))
        assert np.array_equal(direct.values, reflected.values)
        assert np.array_equal(direct.flags, reflected.flags)

    def test_dimension_mismatch(self):
        grid = TimeGrid(0.0, 1.0, 16)
        path = SampledPath.zeros(grid, 2)
        with pytest.raises(DimensionError):
            frac_integral(path, MultiOrder((0.5,)), Side.LEFT)

    def test_semigroup_property(self):
        a, b = 0.3, 0.45
        errs = []
        sizes = (128, 256, 512, 1024)
        for n in sizes:
            grid = TimeGrid(0.0, 1.0, n)
            path = SampledPath.from_function(grid, lambda t: np.sin(t) + 1.3)
            two = frac_integral(
                frac_integral(path, MultiOrder((a,)), Side.LEFT), MultiOrder((b,)), Side.LEFT
            )
            one = frac_integral(path, MultiOrder((a + b,)), Side.LEFT)
            errs.append(np.max(np.abs(two.values - one.values)))
        slope = -np.polyfit(np.log(sizes), np.log(errs), 1)[0]
        assert slope >= 0.8 * min(a, b)


class TestCaputoDerivative:
    def test_kills_constants(self):
        grid = TimeGrid(0.0, 1.0, 64)
        path = SampledPath.from_function(grid, lambda t: 3.0 * np.ones_like(t))
        out = caputo_derivative(path, MultiOrder((0.5,)), Side.LEFT)
        assert np.max(np.abs(out.values)) == 0.0
        assert out.flags[0]

    def test_linear_power_rule(self):
        grid = TimeGrid(0.0, 1.0, 512)
        path = SampledPath.from_function(grid, lambda t: t)
        out = caputo_derivative(path, MultiOrder((0.5,)), Side.LEFT)
        exact = grid.nodes() ** 0.5 / gamma_fn(1.5)
        sel = out.unflagged()
        assert np.max(np.abs(out.values[0][sel] - exact[sel])) < 1e-3

    def test_fractional_power_rule(self):
        grid = TimeGrid(0.0, 1.0, 1024)
        path = SampledPath.from_function(grid, lambda t: t**1.7)
        out = caputo_derivative(path, MultiOrder((0.3,)), Side.LEFT)
        exact = math.gamma(2.7) / math.gamma(2.4) * grid.nodes() ** 1.4
        sel = out.unflagged()
        assert np.max(np.abs(out.values[0][sel] - exact[sel])) < 1e-3

    def test_right_side_endpoint_flag(self):
        grid = TimeGrid(0.0, 1.0, 32)
        path = SampledPath.from_function(grid, lambda t: t**2)
        out = caputo_derivative(path, MultiOrder((0.4,)), Side.RIGHT)
        assert out.flags[-1] and not out.flags[0]

    def test_inverts_fractional_integral(self):
        # caputo(I^a f, a) recovers f for smooth f with f(a) = 0
        alpha = 0.4
        errs = []
        sizes = (128, 256, 512)
        for n in sizes:
            grid = TimeGrid(0.0, 1.0, n)
            path = SampledPath.from_function(grid, np.sin)
            integ = frac_integral(path, MultiOrder((alpha,)), Side.LEFT)
            back = caputo_derivative(integ, MultiOrder((alpha,)), Side.LEFT)
            sel = back.unflagged()
            errs.append(np.max(np.abs(back.values[0][sel] - np.sin(grid.nodes())[sel])))
        c = errs[0] / (1.0 / sizes[0]) ** (1.0 - alpha)
        for n, err in zip(sizes[1:], errs[1:]):
            assert err <= 1.5 * c * (1.0 / n) ** (1.0 - alpha)


class TestRlDerivative:
    def test_constant_decays_like_kernel(self):
        grid = TimeGrid(0.0, 1.0, 256)
        c = 3.0
        path = SampledPath.from_function(grid, lambda t: c * np.ones_like(t))
        out = rl_derivative(path, MultiOrder((0.5,)), Side.LEFT)
        t = grid.nodes()
        sel = (t >= 0.1) & out.unflagged()
        exact = c * t[sel] ** -0.5 / gamma_fn(0.5)
        assert np.max(np.abs(out.values[0][sel] - exact)) < 5e-2

    def test_right_kernel_function_annihilated(self):
        alpha = 0.4
        grid = TimeGrid(1.0, 5.0, 1024)
        path = singular_right_path(grid, lambda s: (5.0 - s) ** (alpha - 1.0))
        out = rl_derivative(path, MultiOrder((alpha,)), Side.RIGHT)
        t = grid.nodes()
        sel = (t <= 4.8) & out.unflagged()
        assert np.max(np.abs(out.values[0][sel])) < 1e-2

    def test_relation_to_caputo(self):
        # D^a x - cD^a x = x(a) (t-a)^(-a) / Gamma(1-a)
        grid = TimeGrid(0.0, 1.0, 512)
        path = SampledPath.from_function(grid, lambda t: 2.0 + t**2)
        alpha = 0.5
        rl = rl_derivative(path, MultiOrder((alpha,)), Side.LEFT)
        cap = caputo_derivative(path, MultiOrder((alpha,)), Side.LEFT)
        t = grid.nodes()
        sel = (t >= 0.05) & rl.unflagged() & cap.unflagged()
        expected = 2.0 * t[sel] ** -alpha / gamma_fn(1.0 - alpha)
        got = rl.values[0][sel] - cap.values[0][sel]
        assert np.max(np.abs(got - expected)) < 1e-2


class TestIntegrationByParts:
    def test_zero_x_gives_zero(self):
        grid = TimeGrid(0.0, 1.0, 64)
        x = SampledPath.zeros(grid, 1)
        y = SampledPath.from_function(grid, lambda t: t**2)
        assert integration_by_parts_residual(x, y, MultiOrder((0.5,))) == 0.0

    def test_polynomial_pair(self):
        grid = TimeGrid(0.0, 1.0, 512)
        x = SampledPath.from_function(grid, lambda t: t)
        y = SampledPath.from_function(grid, lambda t: t**2)
        assert integration_by_parts_residual(x, y, MultiOrder((0.5,))) <= 0.05

    def test_residual_decreases_under_refinement(self):
        prev = None
        for n in (128, 256, 512, 1024):
            grid = TimeGrid(0.0, 1.0, n)
            x = SampledPath.from_function(grid, lambda t: t)
            y = SampledPath.from_function(grid, lambda t: t**2)
            r = integration_by_parts_residual(x, y, MultiOrder((0.5,)))
            if prev is not None:
                assert r <= 1.1 * prev
            prev = r

    def test_constant_y_reduces_to_boundary_identity(self):
        grid = TimeGrid(0.0, 1.0, 512)
        orders = MultiOrder((0.5,))
        x = SampledPath.from_function(grid, lambda t: np.cos(t))
        y = SampledPath.from_function(grid, lambda t: 2.0 * np.ones_like(t))
        r = integration_by_parts_residual(x, y, orders)
        assert r <= 0.05

    def test_grid_mismatch(self):
        x = SampledPath.zeros(TimeGrid(0.0, 1.0, 32), 1)
        y = SampledPath.zeros(TimeGrid(0.0, 1.0, 64), 1)
        with pytest.raises(DimensionError):
            integration_by_parts_residual(x, y, MultiOrder((0.5,)))


class TestConcurrency:
    def test_parallel_operator_calls_share_the_weight_cache(self):
        import threading

        grid = TimeGrid(0.0, 1.0, 300)
        path = SampledPath.from_function(grid, lambda t: np.sin(3 * t) + t)
        orders = MultiOrder((0.41,))
        expected = frac_integral(path, orders, Side.LEFT).values
        results = [None] * 8
        errors = []

        def work(i):
            try:
                results[i] = frac_integral(path, orders, Side.LEFT).values
            except Exception as exc:  # noqa: BLE001
                errors.append(exc)

        threads = [threading.Thread(target=work, args=(i,)) for i in range(8)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert not errors
        for r in results:
            assert np.array_equal(r, expected)
