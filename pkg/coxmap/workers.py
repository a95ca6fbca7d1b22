"""
Thread pool helpers. Work is divided round-robin between threads, and
results are always put back together in the original order, so the
answer does not depend on the number of threads.
"""
from concurrent import futures


def divideByThread(itemList, numthreads):
    """
    Divide up the given itemList into several such lists, one
    per thread. Return a list of these sub-lists.

    Item i goes to thread (i mod numthreads).
    """
    itemsPerThread = []
    for i in range(numthreads):
        sublist = itemList[i::numthreads]
        itemsPerThread.append(sublist)
    return itemsPerThread


def runByThread(func, itemList, numthreads=1):
    """
    Call func(item) for every item in itemList, using numthreads
    worker threads. Returns the list of results, in the same order as
    itemList. If any worker raises an exception, it is re-raised here.
    """
    itemList = list(itemList)
    numthreads = max(1, min(int(numthreads), len(itemList)))
    if numthreads == 1:
        return [func(item) for item in itemList]

    indexesPerThread = divideByThread(list(range(len(itemList))), numthreads)
    with futures.ThreadPoolExecutor(max_workers=numthreads) as threadPool:
        workerList = []
        for indexes in indexesPerThread:
            worker = threadPool.submit(workerFunc, func, itemList, indexes)
            workerList.append(worker)

    results = [None] * len(itemList)
    for worker in workerList:
        # result() re-raises any exception from the worker
        for (i, res) in worker.result():
            results[i] = res
    return results


def workerFunc(func, itemList, indexes):
    """
    This function is run by each worker thread, on its own list of
    item indexes. Returns a list of (index, result) pairs.
    """
    return [(i, func(itemList[i])) for i in indexes]
