/* tslint:disable */
/* eslint-disable */

export function conformalCoverage(alpha: number, m_cal: number, m_test: number, spread: number, floor_rule: boolean, seed: bigint): string;

export function planDay(n_buses: number, seed: bigint, day: number, price_margin: number, load_margin: number, bess_cost: number): string;

/**
 * Re-solves the day with every storage size pinned to zero, so the page
 * can show what the batteries save.
 */
export function planWithoutStorage(n_buses: number, seed: bigint, day: number, price_margin: number, load_margin: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly conformalCoverage: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly planDay: (a: number, b: bigint, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly planWithoutStorage: (a: number, b: bigint, c: number, d: number, e: number) => [number, number, number, number];
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
