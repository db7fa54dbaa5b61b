/* tslint:disable */
/* eslint-disable */

/**
 * Consensus of the bundled literature curves, in the same JSON shape.
 */
export function literature(q: number, k: number): string;

/**
 * SVG of `j` sampled trajectories with their pointwise mean and median.
 */
export function simulate(j: number, seed: bigint): string;

/**
 * Consensus of a sampled ensemble, as JSON `{svg, params, shifts, iterations, converged}`.
 */
export function summarize(j: number, seed: bigint, q: number, k: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly literature: (a: number, b: number) => [number, number, number, number];
    readonly simulate: (a: number, b: bigint) => [number, number, number, number];
    readonly summarize: (a: number, b: bigint, c: number, d: number) => [number, number, number, number];
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
