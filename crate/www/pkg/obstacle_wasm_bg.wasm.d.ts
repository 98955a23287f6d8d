/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_densityview_free: (a: number, b: number) => void;
export const __wbg_pathsview_free: (a: number, b: number) => void;
export const __wbg_solveview_free: (a: number, b: number) => void;
export const density: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const densityview_mass: (a: number) => number;
export const densityview_p: (a: number) => [number, number];
export const densityview_x: (a: number) => [number, number];
export const pathsview_count: (a: number) => number;
export const pathsview_t: (a: number) => [number, number];
export const pathsview_values: (a: number) => [number, number];
export const sample_paths: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const solve: (a: number, b: number, c: number, d: number) => [number, number, number];
export const solveview_contact: (a: number) => [number, number];
export const solveview_h0: (a: number) => [number, number];
export const solveview_t: (a: number) => [number, number];
export const solveview_u0: (a: number) => [number, number];
export const solveview_x: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
