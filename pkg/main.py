import uvicorn
from fastapi import FastAPI, Depends, HTTPException
from sqlalchemy import text
from sqlalchemy.orm import Session

from src.conf.config import settings
from src.database.db import get_db
from src.routes import completions

app = FastAPI(title="RALLY completion server")

app.include_router(completions.router)


@app.get("/api/healthchecker")
def healthchecker(db: Session = Depends(get_db)):
    """
    The healthchecker function reports whether the sample store answers a trivial query.

    :param db: Session: Get the database connection from the dependency
    :return: A dict with a message
    """
    try:
        result = db.execute(text("SELECT 1")).fetchone()
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error connecting to the database: {e}")
    if result is None:
        raise HTTPException(status_code=500, detail="Database is not configured correctly")
    return {"message": "RALLY completion server is running"}


if __name__ == '__main__':
    uvicorn.run('main:app', host=settings.server_host, port=settings.server_port)
