"""Quick check of the Python bindings. Build first with
`maturin develop -m crates/py/Cargo.toml --release`."""

import math

import symtree


def main():
    ref = symtree.TreeModel.reference()
    assert ref.depth == 2
    assert abs(ref.predict(0.75) - 75.0) < 0.01, ref.predict(0.75)
    again = symtree.TreeModel.from_json(ref.to_json())
    assert again.predict(0.3) == ref.predict(0.3)

    sol = symtree.solve_mpc(0.6)
    assert abs(sol.first_action - 54.0) < 1e-3, sol.first_action
    assert len(sol.states) == 10 and len(sol.controls) == 9

    data = symtree.generate_dataset(n=12)
    assert len(data) == 12
    fit = symtree.fit_tree(data, depth=1, y_bounds=(-1000.0, 1000.0))
    assert math.isclose(fit.objective, fit.l_acc + 1e-2 * (fit.l_c + fit.l_m), rel_tol=1e-9)
    print(fit.model)

    counts = symtree.milp_counts(data, depth=1)
    assert all(c > 0 for c in counts)

    trace = symtree.simulate(fit.model, t_final=2.0)
    assert len(trace.times) == 21 and math.isfinite(trace.iae)
    const = symtree.simulate(54.0, x0=0.6, t_final=1.0)
    assert abs(const.states[-1] - 0.6) < 1e-6

    lin = symtree.fit_baseline(data, "lintree", depth=1)
    assert math.isfinite(lin.predict(0.5))

    try:
        symtree.fit_baseline(data, "forest")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown baseline accepted")

    print("symtree", symtree.__version__, "smoke test ok")


if __name__ == "__main__":
    main()
