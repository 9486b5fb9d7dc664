//! Home of the acceptance integration test; see `tests/acceptance.rs`. The
//! checks live in `hessfit_bench::verify`.
