/* tslint:disable */
/* eslint-disable */

/**
 * Final-time density of the grid chain started at a node.
 */
export class DensityView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    mass(): number;
    p(): Float64Array;
    x(): Float64Array;
}

/**
 * Sample paths stored path after path, each with `t().len()` points.
 */
export class PathsView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    count(): number;
    t(): Float64Array;
    values(): Float64Array;
}

/**
 * Value function at `t = 0` and the contact set over time.
 */
export class SolveView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    contact(): Uint8Array;
    h0(): Float64Array;
    t(): Float64Array;
    u0(): Float64Array;
    x(): Float64Array;
}

export function density(text: string, nx: number, nt: number, x0: number): DensityView;

export function sample_paths(text: string, x0: number, count: number, steps: number, seed: number): PathsView;

export function solve(text: string, nx: number, nt: number): SolveView;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_densityview_free: (a: number, b: number) => void;
    readonly __wbg_pathsview_free: (a: number, b: number) => void;
    readonly __wbg_solveview_free: (a: number, b: number) => void;
    readonly density: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly densityview_mass: (a: number) => number;
    readonly densityview_p: (a: number) => [number, number];
    readonly densityview_x: (a: number) => [number, number];
    readonly pathsview_count: (a: number) => number;
    readonly pathsview_t: (a: number) => [number, number];
    readonly pathsview_values: (a: number) => [number, number];
    readonly sample_paths: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly solve: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly solveview_contact: (a: number) => [number, number];
    readonly solveview_h0: (a: number) => [number, number];
    readonly solveview_t: (a: number) => [number, number];
    readonly solveview_u0: (a: number) => [number, number];
    readonly solveview_x: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
