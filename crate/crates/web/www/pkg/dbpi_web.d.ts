/* tslint:disable */
/* eslint-disable */

export class Network {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    degrees(): Uint32Array;
    /**
     * `[a0, b0, a1, b1, ...]` node index pairs.
     */
    edges(): Uint32Array;
    /**
     * `[x0, y0, x1, y1, ...]` in the unit square.
     */
    positions(): Float64Array;
    /**
     * `ρ(W − 11ᵀ/N)` for the Metropolis weights.
     */
    readonly consensus_rho: number;
}

export class Trace {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    errors(): Float64Array;
    iterations(): Uint32Array;
    readonly diverged: boolean;
}

export function em_trace(n: number, radius: number, snr_db: number, alpha: number, iters: number, seed: number): Trace;

export function network(n: number, radius: number, seed: number): Network;

export function sanger_rho_sweep(lambdas: Float64Array, m: number, points: number, max_ratio: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_network_free: (a: number, b: number) => void;
    readonly __wbg_trace_free: (a: number, b: number) => void;
    readonly em_trace: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly network: (a: number, b: number, c: number) => [number, number, number];
    readonly network_consensus_rho: (a: number) => number;
    readonly network_degrees: (a: number) => [number, number];
    readonly network_edges: (a: number) => [number, number];
    readonly network_positions: (a: number) => [number, number];
    readonly sanger_rho_sweep: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly trace_diverged: (a: number) => number;
    readonly trace_errors: (a: number) => [number, number];
    readonly trace_iterations: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
